#include <algorithm>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "specklenn/baseline.hpp"
#include "specklenn/eval.hpp"
#include "specklenn/pipeline.hpp"
#include "specklenn/simulator.hpp"
#include "specklenn/trainer.hpp"
#include "specklenn/http_api.hpp"

#include <CLI11.hpp>

namespace fs = std::filesystem;
using namespace specklenn;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
  return read_dataset(dir);
}

EmbeddingNet<float> load_model(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("checkpoint directory not found: " + dir.string());
  return load_embedding_net<float>(dir);
}

SimulatorConfig simulator_for(const Dataset& ds) {
  SimulatorConfig sim;
  auto it = ds.attributes().find("photon_scale");
  if (it != ds.attributes().end()) sim.photon_scale = parse_double(it->second);
  return sim;
}

// ---- simulate ----

struct SimulateArgs {
  fs::path out;
  std::size_t samples = 10;
  int first_sample = 0;
  std::size_t per_category = 100;
  std::vector<std::string> categories{"single", "double", "triple", "quadruple"};
  std::uint64_t seed = 0;
  double fluence_scale = 1.0;
  double photon_scale = SimulatorConfig{}.photon_scale;
  std::size_t threads = default_thread_count();
};

int run_simulate(const SimulateArgs& a) {
  SimulatorConfig sim;
  sim.photon_scale = a.photon_scale;
  BuildSpec spec;
  spec.per_category = a.per_category;
  spec.categories.clear();
  for (const auto& c : a.categories) spec.categories.push_back(parse_category(c));
  spec.seed = a.seed;
  spec.fluence_scale = a.fluence_scale;
  spec.threads = a.threads;
  const Dataset ds = build_dataset(a.samples, spec, sim, a.first_sample);
  write_dataset(ds, a.out);
  std::printf("wrote %zu frames to %s\n", ds.size(), a.out.string().c_str());
  return 0;
}

// ---- shared training flags ----

struct TrainArgs {
  fs::path data;
  fs::path out;
  double train = 0.7, val = 0.3, test = 0.0;
  std::uint64_t split_seed = 0;
  std::size_t budget = 0;      // per class after augmentation; 0 trains on the raw split
  std::size_t val_budget = 0;  // same for validation
  TrainerConfig trainer{};
  fs::path init;               // warm start checkpoint
  bool with_baseline = false;
  double threshold = 0.9;
  std::size_t threads = default_thread_count();
};

void add_train_flags(CLI::App* app, TrainArgs& a) {
  app->add_option("--data", a.data, "Source dataset directory")->required();
  app->add_option("--out", a.out, "Output directory")->required();
  app->add_option("--train-fraction", a.train)->check(CLI::Range(0.0, 1.0));
  app->add_option("--val-fraction", a.val)->check(CLI::Range(0.0, 1.0));
  app->add_option("--test-fraction", a.test)->check(CLI::Range(0.0, 1.0));
  app->add_option("--split-seed", a.split_seed);
  app->add_option("--budget", a.budget, "Training frames per class after augmentation (0: no augmentation)");
  app->add_option("--val-budget", a.val_budget, "Validation frames per class after augmentation (0: none)");
  app->add_option("--epochs", a.trainer.epochs)->check(CLI::PositiveNumber);
  app->add_option("--batch-size", a.trainer.batch_size)->check(CLI::Range(2, 1 << 20));
  app->add_option("--triplets", a.trainer.triplets_per_batch)->check(CLI::PositiveNumber);
  app->add_option("--alpha", a.trainer.alpha)->check(CLI::Range(0.0, 4.0));
  app->add_option("--lr", a.trainer.learning_rate)->check(CLI::NonNegativeNumber);
  app->add_option("--seed", a.trainer.seed);
  app->add_option("--threads", a.threads)->check(CLI::PositiveNumber);
}

struct Pools {
  Dataset train, val;
  Splits splits;
};

Pools make_pools(const TrainArgs& a) {
  const Dataset src = load_dataset(a.data);
  Pools p{Dataset(src.frame_size()), Dataset(src.frame_size()), {}};
  p.splits = split_dataset(src, {a.train, a.val, a.test, a.split_seed});
  AugmentConfig aug;
  p.train = a.budget ? expand_split(src, p.splits.train, a.budget, aug, stream_seed(a.split_seed, 1), {}, a.threads)
                     : src.subset(indices_of(src, p.splits.train));
  if (!p.splits.val.empty())
    p.val = a.val_budget ? expand_split(src, p.splits.val, a.val_budget, aug, stream_seed(a.split_seed, 2), {}, a.threads)
                         : src.subset(indices_of(src, p.splits.val));
  if (!leaked_ids(p.train, p.splits).empty()) throw std::logic_error("training pool leaks validation or test frames");
  write_splits(p.splits, a.out / "splits");
  return p;
}

int run_train(const TrainArgs& a, bool online) {
  fs::create_directories(a.out);
  const Pools pools = make_pools(a);
  std::printf("train %zu frames, val %zu frames\n", pools.train.size(), pools.val.size());
  EmbeddingNet<float> net = a.init.empty() ? EmbeddingNet<float>::build({}, a.trainer.seed) : load_model(a.init);
  nlohmann::json history = nlohmann::json::array();
  const TrainResult r = train(net, pools.train, pools.val.empty() ? nullptr : &pools.val, a.trainer,
                              [&](const EpochMetrics& m) {
                                history.push_back(to_json(m));
                                std::printf("%s\n", to_json(m).dump().c_str());
                                std::fflush(stdout);
                              });
  save_embedding_net(net, a.out / "model", {a.trainer.seed, r.best_epoch, r.best_val_loss, 1});
  nlohmann::json report{{"protocol", online ? "online" : "offline"},
                        {"train_frames", pools.train.size()},
                        {"val_frames", pools.val.size()},
                        {"best_epoch", r.best_epoch},
                        {"best_val_loss", r.best_val_loss},
                        {"history", history}};
  if (a.with_baseline) {
    BaselineConfig bc;
    bc.threshold = a.threshold;
    BaselineNet<float> bn = BaselineNet<float>::build(bc, a.trainer.seed);
    BaselineTrainConfig tc{a.trainer.batch_size, a.trainer.epochs, a.trainer.learning_rate, a.trainer.seed};
    nlohmann::json bh = nlohmann::json::array();
    const auto br = train_baseline(bn, pools.train, pools.val.empty() ? nullptr : &pools.val, tc,
                                   [&](const BaselineEpochMetrics& m) {
                                     bh.push_back(to_json(m));
                                     std::printf("baseline %s\n", to_json(m).dump().c_str());
                                     std::fflush(stdout);
                                   });
    save_baseline(bn, a.out / "baseline", {a.trainer.seed, br.best_epoch, 0, 1});
    report["baseline"] = {{"best_epoch", br.best_epoch}, {"history", bh}};
  }
  write_text(a.out / "training.json", report.dump(2) + "\n");
  std::printf("wrote %s\n", (a.out / "model").string().c_str());
  return 0;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string protocol = "fewshot";
  fs::path model;
  fs::path data;
  fs::path baseline;
  fs::path out;
  fs::path csv;
  std::vector<std::size_t> shots;
  std::size_t episodes = 20;
  std::uint64_t seed = 0;
  std::vector<double> factors;
  std::vector<double> visible{1.0, 0.25};
  std::vector<std::size_t> bins;
  std::size_t per_category = 40;
  std::size_t samples_per_bin = 1;
  std::size_t threads = default_thread_count();
};

int run_evaluate(const EvaluateArgs& a) {
  const EmbeddingNet<float> net = load_model(a.model);
  nlohmann::json report;
  std::string csv;
  if (a.protocol == "fewshot") {
    const Dataset ds = load_dataset(a.data);
    const std::size_t shots = a.shots.empty() ? 5 : a.shots.front();
    const FewShotReport r = run_fewshot_eval(embed_dataset(net, ds, a.threads), ds, {shots, a.episodes, a.seed, true});
    report = to_json(r);
    std::printf("%zu-shot accuracy %.4f +- %.4f, f1 %.4f\n", shots, r.mean_accuracy, r.std_accuracy, r.mean_f1);
  } else if (a.protocol == "fluence") {
    const Dataset ds = load_dataset(a.data);
    std::set<int> ids;
    for (const auto& r : ds.records()) ids.insert(r.sample_id);
    const std::vector<int> id_list(ids.begin(), ids.end());
    const SimulatorConfig sim = simulator_for(ds);
    const auto seed_attr = ds.attributes().find("seed");
    if (seed_attr == ds.attributes().end()) throw std::runtime_error("dataset has no 'seed' attribute; cannot re-render");
    const auto samples = make_samples(id_list, std::stoull(seed_attr->second), sim);
    FluenceSweepConfig fc;
    if (!a.factors.empty()) fc.factors = a.factors;
    if (!a.shots.empty()) fc.shots = a.shots;
    fc.episodes = a.episodes;
    fc.seed = a.seed;
    fc.threads = a.threads;
    const SweepReport r = run_fluence_sweep(net, ds, samples, sim, fc);
    report = to_json(r);
    csv = to_csv(r);
  } else if (a.protocol == "size") {
    SizeSweepConfig sc;
    sc.bins = a.bins;
    sc.per_category = a.per_category;
    sc.samples_per_bin = a.samples_per_bin;
    if (!a.factors.empty()) sc.fluences = a.factors;
    if (!a.shots.empty()) sc.shots = a.shots.front();
    sc.episodes = a.episodes;
    sc.seed = a.seed;
    sc.threads = a.threads;
    const SweepReport r = run_size_sweep(net, SimulatorConfig{}, sc);
    report = to_json(r);
    csv = to_csv(r);
  } else if (a.protocol == "masking") {
    if (a.baseline.empty()) throw CLI::ValidationError("--baseline", "required for the masking protocol");
    if (!fs::is_directory(a.baseline)) throw std::runtime_error("checkpoint directory not found: " + a.baseline.string());
    const BaselineNet<float> bn = load_baseline<float>(a.baseline);
    MaskingConfig mc;
    mc.visible_fractions = a.visible;
    if (!a.shots.empty()) mc.shots = a.shots.front();
    mc.episodes = a.episodes;
    mc.seed = a.seed;
    mc.threads = a.threads;
    const MaskingReport r = run_masking_comparison(net, bn, load_dataset(a.data), mc);
    report = to_json(r);
    csv = to_csv(r);
  } else {
    throw CLI::ValidationError("--protocol", "must be fewshot, fluence, size or masking");
  }
  if (!csv.empty()) std::printf("%s", csv.c_str());
  if (!a.out.empty()) write_text(a.out, report.dump(2) + "\n");
  if (!a.csv.empty() && !csv.empty()) write_text(a.csv, csv);
  return 0;
}

// ---- classify ----

struct ClassifyArgs {
  fs::path model;
  fs::path support;
  fs::path input;
  fs::path out;
  std::size_t shots = 0;  // 0 uses every support frame
};

int run_classify(const ClassifyArgs& a) {
  const EmbeddingNet<float> net = load_model(a.model);
  const Dataset sup = load_dataset(a.support);
  const Dataset in = load_dataset(a.input);
  std::map<HitLabel, std::size_t> taken;
  std::vector<std::size_t> idx;
  std::vector<std::string> labels, sources;
  for (std::size_t i = 0; i < sup.size(); ++i) {
    const HitLabel l = sup.record(i).label;
    if (a.shots && taken[l] >= a.shots) continue;
    ++taken[l];
    idx.push_back(i);
    labels.emplace_back(to_string(l));
    sources.push_back(sup.record(i).id);
  }
  const SupportSet support = build_support_set(net, sup.frames(idx), labels, sources);
  std::string text = "id,predicted_label,tie";
  for (const auto& c : support.classes) text += ",d_" + c.label;
  text += "\n";
  const std::size_t S = in.frame_size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    Tensor<float> image(Shape{1, 1, S, S});
    std::copy(in.frame(i).begin(), in.frame(i).end(), image.data());
    const ClassificationResult r = classify_pattern(net, image, support);
    text += in.record(i).id + "," + r.predicted_label + "," + (r.tie ? "1" : "0");
    for (double d : r.mean_distance) text += "," + format_double(d);
    text += "\n";
  }
  if (a.out.empty()) std::fputs(text.c_str(), stdout);
  else write_text(a.out, text);
  return 0;
}

// ---- serve ----

struct ServeArgs {
  ServiceConfig config;
  fs::path ingest;
  std::size_t retrain_epochs = 5;
  bool no_auto_retrain = false;
};

int run_serve(ServeArgs a) {
  a.config.trainer.epochs = a.retrain_epochs;
  a.config.auto_retrain = !a.no_auto_retrain;
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  Service service(a.config);
  if (!a.ingest.empty()) {
    const Dataset ds = load_dataset(a.ingest);
    for (std::size_t i = 0; i < ds.size(); ++i)
      service.add_frame({ds.frame(i).begin(), ds.frame(i).end()}, {ds.mask(i).begin(), ds.mask(i).end()});
  }
  HttpApi api(service);
  const int port = api.start(a.config.host, a.config.port);
  std::printf("listening on %s:%d\n", a.config.host.c_str(), port);
  std::fflush(stdout);
  int sig = 0;
  sigwait(&set, &sig);
  api.stop();
  service.wait_idle();
  return 0;
}

// Replaces `--config FILE` with the file's `key = value` lines as flags placed
// right after the subcommand. Flags given on the command line win.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  fs::path file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (file.empty() || args.empty()) return args;
  if (!fs::is_regular_file(file)) throw CLI::FileError::Missing(file.string());
  std::set<std::string> given;
  for (const auto& a : args)
    if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') - 2));
  std::vector<std::string> injected;
  for (const auto& item : CLI::ConfigTOML().from_file(file.string())) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && item.parents != std::vector<std::string>{args.front()}) continue;
    std::string name = item.name;
    std::replace(name.begin(), name.end(), '_', '-');
    if (given.count(name)) continue;
    if (item.inputs.size() == 1) {
      injected.push_back("--" + name + "=" + item.inputs.front());
    } else {
      injected.push_back("--" + name);
      injected.insert(injected.end(), item.inputs.begin(), item.inputs.end());
    }
  }
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot speckle pattern classification"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Render a simulated dataset");
  s->add_option("--out", sim.out, "Dataset directory to write")->required();
  s->add_option("--samples", sim.samples)->check(CLI::PositiveNumber);
  s->add_option("--first-sample", sim.first_sample)->check(CLI::NonNegativeNumber);
  s->add_option("--per-category", sim.per_category)->check(CLI::PositiveNumber);
  s->add_option("--categories", sim.categories)->delimiter(',');
  s->add_option("--seed", sim.seed);
  s->add_option("--fluence-scale", sim.fluence_scale)->check(CLI::PositiveNumber);
  s->add_option("--photon-scale", sim.photon_scale)->check(CLI::PositiveNumber);
  s->add_option("--threads", sim.threads)->check(CLI::PositiveNumber);

  TrainArgs off;
  auto* t = app.add_subcommand("train-offline", "Train on a multi-sample dataset");
  add_train_flags(t, off);

  TrainArgs on;
  on.train = 0.5;
  on.val = 0.25;
  on.test = 0.25;
  on.budget = 1300;
  auto* o = app.add_subcommand("train-online", "Train from a small labeled spool with augmentation");
  add_train_flags(o, on);
  o->add_option("--init", on.init, "Warm-start checkpoint (default: random init)");
  o->add_flag("--baseline", on.with_baseline, "Also train the binary single-hit baseline on the same pools");
  o->add_option("--threshold", on.threshold, "Baseline probability threshold")->check(CLI::Range(0.0, 1.0));

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Run an evaluation protocol");
  e->add_option("--protocol", ev.protocol)->check(CLI::IsMember({"fewshot", "fluence", "size", "masking"}));
  e->add_option("--model", ev.model, "Embedding checkpoint directory")->required();
  e->add_option("--data", ev.data, "Test dataset directory");
  e->add_option("--baseline", ev.baseline, "Baseline checkpoint directory (masking)");
  e->add_option("--out", ev.out, "JSON report path");
  e->add_option("--csv", ev.csv, "CSV table path");
  e->add_option("--shots", ev.shots)->delimiter(',')->check(CLI::PositiveNumber);
  e->add_option("--episodes", ev.episodes)->check(CLI::PositiveNumber);
  e->add_option("--seed", ev.seed);
  e->add_option("--factors", ev.factors, "Fluence factors")->delimiter(',')->check(CLI::PositiveNumber);
  e->add_option("--visible", ev.visible, "Visible detector fractions")->delimiter(',')->check(CLI::Range(0.0, 1.0));
  e->add_option("--bins", ev.bins, "Size bins")->delimiter(',');
  e->add_option("--per-category", ev.per_category)->check(CLI::PositiveNumber);
  e->add_option("--samples-per-bin", ev.samples_per_bin)->check(CLI::PositiveNumber);
  e->add_option("--threads", ev.threads)->check(CLI::PositiveNumber);

  ClassifyArgs cl;
  auto* c = app.add_subcommand("classify", "Classify frames against a labeled support dataset");
  c->add_option("--model", cl.model)->required();
  c->add_option("--support", cl.support, "Labeled support dataset directory")->required();
  c->add_option("--input", cl.input, "Dataset directory of frames to classify")->required();
  c->add_option("--out", cl.out, "CSV output (default stdout)");
  c->add_option("--shots", cl.shots, "Supports per class (0: all)");

  ServeArgs sv;
  auto* v = app.add_subcommand("serve", "Run the online classification service");
  v->add_option("--checkpoint", sv.config.checkpoint, "Embedding checkpoint (default: random init)");
  v->add_option("--shots", sv.config.shots)->check(CLI::PositiveNumber);
  v->add_option("--labels", sv.config.labels)->delimiter(',');
  v->add_option("--retrain-min", sv.config.retrain_min_per_class)->check(CLI::PositiveNumber);
  v->add_flag("--no-auto-retrain", sv.no_auto_retrain);
  v->add_flag("--from-scratch", sv.config.from_scratch);
  v->add_option("--retrain-epochs", sv.retrain_epochs)->check(CLI::PositiveNumber);
  v->add_option("--retrain-budget", sv.config.retrain_budget)->check(CLI::PositiveNumber);
  v->add_option("--seed", sv.config.trainer.seed);
  v->add_option("--host", sv.config.host);
  v->add_option("--port", sv.config.port)->check(CLI::Range(0, 65535));
  v->add_option("--spool", sv.config.spool, "Directory receiving the labeled frames");
  v->add_option("--ingest", sv.ingest, "Dataset directory whose frames are queued at start");

  std::string config_help;
  for (CLI::App* sub : {s, t, o, e, c, v}) {
    sub->add_option("--config", config_help, "File of flat `key = value` lines supplying any flag");
  }

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }
  try {
    if (*s) return run_simulate(sim);
    if (*t) return run_train(off, false);
    if (*o) return run_train(on, true);
    if (*e) return run_evaluate(ev);
    if (*c) return run_classify(cl);
    if (*v) {
      sv.config.validate();
      return run_serve(sv);
    }
  } catch (const CLI::Error& err) {
    return app.exit(err);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 0;
}
