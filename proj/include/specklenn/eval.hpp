#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "specklenn/baseline.hpp"
#include "specklenn/dataset.hpp"
#include "specklenn/embedding.hpp"
#include "specklenn/fewshot.hpp"
#include "specklenn/parallel.hpp"
#include "specklenn/simulator.hpp"

namespace specklenn {

/// counts[true][predicted] over a fixed class list.
struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::vector<std::size_t>> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> names)
      : classes(std::move(names)), counts(classes.size(), std::vector<std::size_t>(classes.size(), 0)) {}

  std::size_t index(const std::string& label) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == label) return i;
    throw std::invalid_argument("confusion matrix has no class '" + label + "'");
  }
  void add(std::size_t truth, std::size_t predicted, std::size_t n = 1) { counts.at(truth).at(predicted) += n; }
  void add(const std::string& truth, const std::string& predicted) { add(index(truth), index(predicted)); }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : counts) n = std::accumulate(row.begin(), row.end(), n);
    return n;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.classes != classes) throw std::invalid_argument("confusion matrices over different classes");
    for (std::size_t i = 0; i < counts.size(); ++i)
      for (std::size_t j = 0; j < counts.size(); ++j) counts[i][j] += o.counts[i][j];
    return *this;
  }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct Metrics {
  double accuracy = 0;
  std::vector<double> f1;  // per class, in matrix order
  double macro_f1 = 0;
};

inline Metrics metrics(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0) throw std::invalid_argument("metrics: confusion matrix is empty");
  const std::size_t K = cm.classes.size();
  Metrics m;
  std::size_t trace = 0;
  for (std::size_t k = 0; k < K; ++k) trace += cm.counts[k][k];
  m.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  for (std::size_t k = 0; k < K; ++k) {
    std::size_t predicted = 0, actual = 0;
    for (std::size_t j = 0; j < K; ++j) {
      predicted += cm.counts[j][k];
      actual += cm.counts[k][j];
    }
    const double tp = static_cast<double>(cm.counts[k][k]);
    const double p = predicted ? tp / static_cast<double>(predicted) : 0.0;
    const double r = actual ? tp / static_cast<double>(actual) : 0.0;
    m.f1.push_back(p + r > 0 ? 2 * p * r / (p + r) : 0.0);
  }
  m.macro_f1 = std::accumulate(m.f1.begin(), m.f1.end(), 0.0) / static_cast<double>(K);
  return m;
}

inline nlohmann::json to_json(const ConfusionMatrix& cm) { return {{"classes", cm.classes}, {"counts", cm.counts}}; }

/// Eval-mode embeddings of every frame of `ds`, computed in parallel.
inline Tensor<float> embed_dataset(const EmbeddingNet<float>& net, const Dataset& ds,
                                   std::size_t threads = default_thread_count()) {
  Tensor<float> out(Shape{ds.size(), net.embedding_dim()});
  const std::size_t S = ds.frame_size();
  parallel_for(ds.size(), threads, [&](std::size_t i) {
    Tensor<float> one(Shape{1, 1, S, S});
    auto f = ds.frame(i);
    std::copy(f.begin(), f.end(), one.data());
    const Tensor<float> e = net.embed(one);
    std::copy(e.data(), e.data() + e.size(), out.row(i).data());
  });
  return out;
}

/// Classes present in `ds`, in label order.
inline std::vector<HitLabel> labels_present(const Dataset& ds) {
  std::vector<HitLabel> out;
  for (const auto& r : ds.records())
    if (std::find(out.begin(), out.end(), r.label) == out.end()) out.push_back(r.label);
  std::sort(out.begin(), out.end());
  return out;
}

struct FewShotConfig {
  std::size_t shots = 5;
  std::size_t episodes = 20;
  std::uint64_t seed = 0;
  /// Draw supports and queries within each sample (one confusion matrix per
  /// entry, as in the per-sample protocol) or from the whole pool.
  bool per_sample = true;
};

struct QueryRecord {
  std::size_t episode = 0;
  std::size_t frame = 0;
  int sample_id = 0;
  std::size_t truth = 0;
  std::size_t predicted = 0;
  bool tie = false;
};

struct FewShotReport {
  FewShotConfig config;
  std::vector<std::string> classes;
  std::vector<double> episode_accuracy;
  std::vector<double> episode_f1;  // single-hit F1 for two classes, macro F1 otherwise
  double mean_accuracy = 0;
  double std_accuracy = 0;
  double mean_f1 = 0;
  double std_f1 = 0;
  ConfusionMatrix overall;
  std::map<int, ConfusionMatrix> per_sample;
  std::vector<QueryRecord> queries;
};

inline std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) return {0, 0};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

/// F1 of single_hit when it is one of two classes, macro F1 otherwise.
inline double headline_f1(const ConfusionMatrix& cm, const Metrics& m) {
  if (cm.classes.size() == 2) {
    for (std::size_t k = 0; k < 2; ++k)
      if (cm.classes[k] == to_string(HitLabel::single_hit)) return m.f1[k];
  }
  return m.macro_f1;
}

/// N-way X-shot episodes over precomputed embeddings. In each episode and
/// group (sample, or the whole pool) X supports per class are drawn without
/// replacement and every other frame of the group is a query.
inline FewShotReport run_fewshot_eval(const Tensor<float>& embeddings, const Dataset& ds, const FewShotConfig& config) {
  if (config.shots == 0 || config.episodes == 0) throw std::invalid_argument("fewshot eval: shots and episodes must be positive");
  if (embeddings.dim(0) != ds.size()) throw ShapeError("fewshot eval: one embedding per frame required");
  const auto labels = labels_present(ds);
  FewShotReport rep;
  rep.config = config;
  for (HitLabel l : labels) rep.classes.push_back(to_string(l));
  rep.overall = ConfusionMatrix(rep.classes);
  std::map<int, std::vector<std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.record(i);
    auto& g = groups[config.per_sample ? r.sample_id : 0];
    g.resize(labels.size());
    g[static_cast<std::size_t>(std::find(labels.begin(), labels.end(), r.label) - labels.begin())].push_back(i);
  }
  for (const auto& [sid, g] : groups)
    for (std::size_t k = 0; k < labels.size(); ++k)
      if (g[k].size() < config.shots + 1) {
        throw std::invalid_argument(std::string("fewshot eval: class ") + to_string(labels[k]) +
                                    (config.per_sample ? " of sample " + std::to_string(sid) : std::string()) +
                                    " has " + std::to_string(g[k].size()) + " patterns, need at least " +
                                    std::to_string(config.shots + 1));
      }
  for (const auto& [sid, g] : groups) rep.per_sample.emplace(sid, ConfusionMatrix(rep.classes));
  for (std::size_t e = 0; e < config.episodes; ++e) {
    ConfusionMatrix cm(rep.classes);
    for (const auto& [sid, g] : groups) {
      Rng rng = make_stream(config.seed, e, 0xe915 + static_cast<std::uint64_t>(sid));
      SupportSet support;
      support.dim = embeddings.dim(1);
      std::vector<std::pair<std::size_t, std::size_t>> queries;  // frame, class
      for (std::size_t k = 0; k < labels.size(); ++k) {
        std::vector<std::size_t> pool = g[k];
        for (std::size_t s = 0; s < config.shots; ++s) {
          std::uniform_int_distribution<std::size_t> pick(s, pool.size() - 1);
          std::swap(pool[s], pool[pick(rng)]);
        }
        SupportClass sc{rep.classes[k], {}, {}};
        for (std::size_t s = 0; s < config.shots; ++s) {
          auto row = embeddings.row(pool[s]);
          sc.embeddings.emplace_back(row.begin(), row.end());
          sc.sources.push_back(ds.record(pool[s]).id);
        }
        support.classes.push_back(std::move(sc));
        for (std::size_t q = config.shots; q < pool.size(); ++q) queries.emplace_back(pool[q], k);
      }
      std::sort(queries.begin(), queries.end());
      for (const auto& [i, truth] : queries) {
        const ClassificationResult res = classify(embeddings.row(i), support);
        cm.add(truth, res.predicted_index);
        rep.per_sample.at(sid).add(truth, res.predicted_index);
        rep.queries.push_back({e, i, sid, truth, res.predicted_index, res.tie});
      }
    }
    const Metrics m = metrics(cm);
    rep.episode_accuracy.push_back(m.accuracy);
    rep.episode_f1.push_back(headline_f1(cm, m));
    rep.overall += cm;
  }
  std::tie(rep.mean_accuracy, rep.std_accuracy) = mean_std(rep.episode_accuracy);
  std::tie(rep.mean_f1, rep.std_f1) = mean_std(rep.episode_f1);
  return rep;
}

inline FewShotReport run_fewshot_eval(const EmbeddingNet<float>& net, const Dataset& ds, const FewShotConfig& config) {
  return run_fewshot_eval(embed_dataset(net, ds), ds, config);
}

inline nlohmann::json to_json(const FewShotReport& r) {
  nlohmann::json per_sample = nlohmann::json::object();
  for (const auto& [sid, cm] : r.per_sample) {
    const Metrics m = metrics(cm);
    per_sample[std::to_string(sid)] = {{"accuracy", m.accuracy}, {"f1", headline_f1(cm, m)}, {"confusion", to_json(cm)}};
  }
  return {{"protocol", "fewshot"},
          {"shots", r.config.shots},
          {"episodes", r.config.episodes},
          {"seed", r.config.seed},
          {"per_sample", r.config.per_sample},
          {"classes", r.classes},
          {"accuracy_mean", r.mean_accuracy},
          {"accuracy_std", r.std_accuracy},
          {"f1_mean", r.mean_f1},
          {"f1_std", r.std_f1},
          {"episode_accuracy", r.episode_accuracy},
          {"episode_f1", r.episode_f1},
          {"confusion", to_json(r.overall)},
          {"entries", per_sample}};
}

/// 10^-2, 10^-1.5, ..., 10^2.
inline std::vector<double> default_fluence_factors() {
  std::vector<double> f;
  for (int k = 0; k <= 8; ++k) f.push_back(std::pow(10.0, -2.0 + 0.5 * k));
  return f;
}

struct SweepRow {
  double fluence = 1;
  std::size_t shots = 0;
  std::size_t size_bin = 0;  // size sweep only
  std::size_t patterns = 0;
  double accuracy_mean = 0;
  double accuracy_std = 0;
  double f1_mean = 0;
  double f1_std = 0;
};

struct SweepReport {
  std::string protocol;
  nlohmann::json config;
  std::vector<SweepRow> rows;
  std::map<std::string, double> summary;

  const SweepRow* find(double fluence, std::size_t shots, std::size_t bin = 0) const {
    for (const auto& r : rows)
      if (r.fluence == fluence && r.shots == shots && r.size_bin == bin) return &r;
    return nullptr;
  }
};

inline nlohmann::json to_json(const SweepReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& x : r.rows)
    rows.push_back({{"fluence", x.fluence},
                    {"shots", x.shots},
                    {"size_bin", x.size_bin},
                    {"patterns", x.patterns},
                    {"accuracy_mean", x.accuracy_mean},
                    {"accuracy_std", x.accuracy_std},
                    {"f1_mean", x.f1_mean},
                    {"f1_std", x.f1_std}});
  return {{"protocol", r.protocol}, {"config", r.config}, {"rows", rows}, {"summary", r.summary}};
}

inline std::string to_csv(const SweepReport& r) {
  std::ostringstream os;
  os << "fluence,shots,size_bin,patterns,accuracy_mean,accuracy_std,f1_mean,f1_std\n";
  for (const auto& x : r.rows)
    os << format_double(x.fluence) << ',' << x.shots << ',' << x.size_bin << ',' << x.patterns << ','
       << format_double(x.accuracy_mean) << ',' << format_double(x.accuracy_std) << ',' << format_double(x.f1_mean)
       << ',' << format_double(x.f1_std) << '\n';
  return os.str();
}

struct FluenceSweepConfig {
  std::vector<double> factors = default_fluence_factors();
  std::vector<std::size_t> shots{1, 5, 20};
  std::size_t episodes = 20;
  std::uint64_t seed = 0;
  std::size_t threads = default_thread_count();
};

/// Renders the frames of `test` again at every fluence factor (same particles,
/// orientations and jitter) and runs the few-shot protocol on each. Conditions
/// share nothing, so the order of `factors` does not matter.
inline SweepReport run_fluence_sweep(const EmbeddingNet<float>& net, const Dataset& test,
                                     std::span<const SampleSpec> samples, const SimulatorConfig& sim,
                                     const FluenceSweepConfig& config) {
  SweepReport rep;
  rep.protocol = "fluence_sweep";
  rep.config = {{"factors", config.factors}, {"shots", config.shots}, {"episodes", config.episodes}, {"seed", config.seed}};
  for (double f : config.factors) {
    if (!(f > 0) || !std::isfinite(f)) throw std::invalid_argument("fluence sweep: factors must be finite and positive");
    const Dataset ds = rerender(test, samples, sim, f, config.threads);
    const Tensor<float> emb = embed_dataset(net, ds, config.threads);
    for (std::size_t x : config.shots) {
      const FewShotReport r = run_fewshot_eval(emb, ds, {x, config.episodes, config.seed, true});
      rep.rows.push_back({f, x, 0, ds.size(), r.mean_accuracy, r.std_accuracy, r.mean_f1, r.std_f1});
    }
  }
  return rep;
}

/// Average ranks, ties sharing the mean rank.
inline std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j) + 1;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation; 0 when either side is constant.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(rx.size());
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(ry.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

struct SizeSweepConfig {
  std::vector<std::size_t> bins;  // empty: every bin of the simulator
  std::size_t samples_per_bin = 1;
  std::size_t per_category = 40;
  std::vector<Category> categories{Category::single, Category::double_hit, Category::triple, Category::quadruple};
  std::vector<double> fluences{1.0, 100.0};
  std::size_t shots = 5;
  std::size_t episodes = 20;
  std::uint64_t seed = 0;
  int first_sample_id = 10000;
  std::size_t threads = default_thread_count();
};

/// Few-shot accuracy per particle-size bin at each fluence, with the Spearman
/// correlation between bin and accuracy per fluence in the summary.
inline SweepReport run_size_sweep(const EmbeddingNet<float>& net, const SimulatorConfig& sim,
                                  const SizeSweepConfig& config) {
  std::vector<std::size_t> bins = config.bins;
  if (bins.empty())
    for (std::size_t b = 0; b < sim.size_bins; ++b) bins.push_back(b);
  SweepReport rep;
  rep.protocol = "size_sweep";
  nlohmann::json edges = nlohmann::json::array();
  for (std::size_t b : bins) {
    const auto [lo, hi] = size_bin_range(b, sim);
    edges.push_back({lo, hi});
  }
  rep.config = {{"bins", bins},          {"bin_edges", edges},           {"samples_per_bin", config.samples_per_bin},
                {"per_category", config.per_category}, {"fluences", config.fluences}, {"shots", config.shots},
                {"episodes", config.episodes}, {"seed", config.seed}};
  std::vector<SampleSpec> samples;
  for (std::size_t k = 0; k < bins.size(); ++k)
    for (std::size_t s = 0; s < config.samples_per_bin; ++s) {
      const int id = config.first_sample_id + static_cast<int>(k * config.samples_per_bin + s);
      samples.push_back(make_sample(id, config.seed, sim, bins[k]));
    }
  for (double f : config.fluences) {
    BuildSpec spec;
    spec.per_category = config.per_category;
    spec.categories = config.categories;
    spec.seed = config.seed;
    spec.fluence_scale = f;
    spec.threads = config.threads;
    const Dataset ds = build_dataset(samples, spec, sim);
    const Tensor<float> emb = embed_dataset(net, ds, config.threads);
    std::vector<double> xs, accs;
    for (std::size_t k = 0; k < bins.size(); ++k) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const int sid = ds.record(i).sample_id - config.first_sample_id;
        if (sid >= 0 && static_cast<std::size_t>(sid) / config.samples_per_bin == k) idx.push_back(i);
      }
      const Dataset sub = ds.subset(idx);
      Tensor<float> sub_emb(Shape{idx.size(), emb.dim(1)});
      for (std::size_t j = 0; j < idx.size(); ++j) std::copy(emb.row(idx[j]).begin(), emb.row(idx[j]).end(), sub_emb.row(j).begin());
      const FewShotReport r = run_fewshot_eval(sub_emb, sub, {config.shots, config.episodes, config.seed, true});
      rep.rows.push_back({f, config.shots, bins[k], sub.size(), r.mean_accuracy, r.std_accuracy, r.mean_f1, r.std_f1});
      xs.push_back(static_cast<double>(bins[k]));
      accs.push_back(r.mean_accuracy);
    }
    rep.summary["spearman_at_" + format_double(f)] = bins.size() >= 2 ? spearman(xs, accs) : 0.0;
  }
  return rep;
}

/// Keeps a top-left square covering `visible_fraction` of the frame (one
/// quadrant at 0.25); the rest is zeroed and flagged invalid.
inline void apply_visible_region(std::span<float> frame, std::span<std::uint8_t> mask, std::size_t size,
                                 double visible_fraction) {
  if (!(visible_fraction > 0 && visible_fraction <= 1)) {
    throw std::invalid_argument("visible fraction must lie in (0, 1]");
  }
  if (visible_fraction == 1.0) return;
  const auto side = static_cast<std::size_t>(std::lround(static_cast<double>(size) * std::sqrt(visible_fraction)));
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      if (y >= side || x >= side) {
        frame[y * size + x] = 0.0f;
        mask[y * size + x] = 0;
      }
}

inline Dataset with_visible_region(const Dataset& ds, double visible_fraction) {
  Dataset out(ds.frame_size());
  out.attributes() = ds.attributes();
  out.reserve(ds.size());
  std::vector<float> f(ds.pixel_count());
  std::vector<std::uint8_t> m(ds.pixel_count());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::copy(ds.frame(i).begin(), ds.frame(i).end(), f.begin());
    std::copy(ds.mask(i).begin(), ds.mask(i).end(), m.begin());
    apply_visible_region(f, m, ds.frame_size(), visible_fraction);
    out.add(ds.record(i), f, m);
  }
  return out;
}

struct MaskingConfig {
  std::vector<double> visible_fractions{1.0, 0.25};
  std::size_t shots = 5;
  std::size_t episodes = 20;
  std::uint64_t seed = 0;
  std::size_t threads = default_thread_count();
};

struct MaskingRow {
  double visible = 1;
  std::string model;
  double accuracy = 0;  // binary single vs non-single
  double f1 = 0;        // single-hit F1
  double accuracy_std = 0;
  std::optional<double> multiclass_accuracy;  // few-shot over all classes
};

struct MaskingReport {
  nlohmann::json config;
  std::vector<MaskingRow> rows;

  const MaskingRow* find(double visible, const std::string& model) const {
    for (const auto& r : rows)
      if (r.visible == visible && r.model == model) return &r;
    return nullptr;
  }
};

inline nlohmann::json to_json(const MaskingReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& x : r.rows) {
    nlohmann::json j{{"visible", x.visible}, {"model", x.model}, {"accuracy", x.accuracy}, {"f1", x.f1},
                     {"accuracy_std", x.accuracy_std}};
    if (x.multiclass_accuracy) j["multiclass_accuracy"] = *x.multiclass_accuracy;
    rows.push_back(j);
  }
  return {{"protocol", "masking"}, {"config", r.config}, {"rows", rows}};
}

inline std::string to_csv(const MaskingReport& r) {
  std::ostringstream os;
  os << "visible,model,accuracy,f1,accuracy_std\n";
  for (const auto& x : r.rows)
    os << format_double(x.visible) << ',' << x.model << ',' << format_double(x.accuracy) << ','
       << format_double(x.f1) << ',' << format_double(x.accuracy_std) << '\n';
  return os.str();
}

/// Single-hit vs rest confusion of the few-shot queries of a report.
inline ConfusionMatrix single_hit_binary(const FewShotReport& r) {
  ConfusionMatrix cm({to_string(HitLabel::single_hit), "non_single_hit"});
  const std::string single = to_string(HitLabel::single_hit);
  for (const auto& q : r.queries) cm.add(r.classes[q.truth] == single ? 0 : 1, r.classes[q.predicted] == single ? 0 : 1);
  return cm;
}

/// Both models on the same frames at each visible fraction. The embedding
/// model classifies few-shot with supports drawn from the same (masked)
/// frames; the baseline thresholds its probability on exactly the episodes'
/// queries. Accuracy and F1 are for single hit vs the rest so the two models
/// are scored alike.
inline MaskingReport run_masking_comparison(const EmbeddingNet<float>& net, const BaselineNet<float>& baseline,
                                            const Dataset& test, const MaskingConfig& config) {
  MaskingReport rep;
  rep.config = {{"visible_fractions", config.visible_fractions}, {"shots", config.shots},
                {"episodes", config.episodes}, {"seed", config.seed}, {"region", "top-left square"}};
  for (double v : config.visible_fractions) {
    const Dataset ds = with_visible_region(test, v);
    const FewShotReport fs = run_fewshot_eval(embed_dataset(net, ds, config.threads), ds,
                                              {config.shots, config.episodes, config.seed, true});
    const ConfusionMatrix bin = single_hit_binary(fs);
    const Metrics mb = metrics(bin);
    std::vector<double> ep_acc;
    for (std::size_t e = 0; e < config.episodes; ++e) {
      std::size_t ok = 0, n = 0;
      for (const auto& q : fs.queries)
        if (q.episode == e) {
          ok += (fs.classes[q.truth] == "single_hit") == (fs.classes[q.predicted] == "single_hit");
          ++n;
        }
      ep_acc.push_back(n ? static_cast<double>(ok) / static_cast<double>(n) : 0.0);
    }
    rep.rows.push_back({v, "specklenn", mb.accuracy, mb.f1[0], mean_std(ep_acc).second, fs.mean_accuracy});

    const auto preds = predict_single_hit_batch(baseline, ds.frames());
    ConfusionMatrix cb({to_string(HitLabel::single_hit), "non_single_hit"});
    for (const auto& q : fs.queries)
      cb.add(is_single_hit_target(ds.record(q.frame).label) ? 0 : 1, preds[q.frame].label == HitLabel::single_hit ? 0 : 1);
    const Metrics m = metrics(cb);
    rep.rows.push_back({v, "baseline", m.accuracy, m.f1[0], 0.0, std::nullopt});
  }
  return rep;
}

}  // namespace specklenn
