#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "specklenn/adam.hpp"
#include "specklenn/checkpoint.hpp"
#include "specklenn/dataset.hpp"
#include "specklenn/embedding.hpp"
#include "specklenn/trainer.hpp"

namespace specklenn {

/// Binary single-hit classifier: the embedding backbone followed by two fully
/// connected layers ending in one logit. Everything that is not single_hit
/// trains as the negative class.
struct BaselineConfig {
  BackboneConfig backbone{};
  std::size_t fc_hidden = 512;
  double threshold = 0.9;

  void validate() const {
    backbone.validate();
    if (fc_hidden == 0) throw std::invalid_argument("baseline config: fc_hidden must be positive");
    if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("baseline config: threshold must lie in (0, 1)");
  }
};

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// single_hit iff p >= threshold.
inline HitLabel single_hit_decision(double probability, double threshold) {
  return probability >= threshold ? HitLabel::single_hit : HitLabel::multi_hit;
}

inline bool is_single_hit_target(HitLabel l) { return l == HitLabel::single_hit; }

namespace nn {

/// Mean binary cross-entropy of [B,1] logits against 0/1 targets, computed as
/// max(z,0) - z*y + log(1 + exp(-|z|)).
template <class T>
Var bce_with_logits(Graph<T>& g, Var logits, std::span<const float> targets) {
  const Tensor<T>& z = g.value(logits);
  detail::require(z.size() == targets.size() && z.size() > 0,
                  "bce_with_logits: need one target per logit, got " + std::to_string(targets.size()) + " for " +
                      shape_str(z.shape()));
  const std::size_t n = z.size();
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double zi = z[i], y = targets[i];
    sum += std::max(zi, 0.0) - zi * y + std::log1p(std::exp(-std::abs(zi)));
  }
  std::vector<float> y(targets.begin(), targets.end());
  Var self{g.size()};
  return g.record(Tensor<T>(Shape{1}, static_cast<T>(sum / static_cast<double>(n))), {logits},
                  [=](Graph<T>& gr) {
                    const double up = gr.grad(self)[0] / static_cast<double>(n);
                    const Tensor<T>& zv = gr.value(logits);
                    Tensor<T>& gz = gr.grad_buffer(logits);
                    for (std::size_t i = 0; i < n; ++i) gz[i] += static_cast<T>(up * (sigmoid(zv[i]) - y[i]));
                  });
}

}  // namespace nn

template <class T = float>
class BaselineNet {
 public:
  BaselineNet() = default;

  static BaselineNet build(const BaselineConfig& config, std::uint64_t seed) {
    config.validate();
    BaselineNet net;
    net.config_ = config;
    Rng rng(seed);
    net.backbone_ = ConvBackbone<T>(config.backbone, rng);
    const double sd = config.backbone.init_std;
    net.fc1_.weight = {"fc1.weight",
                       detail::gaussian_tensor<T>({config.fc_hidden, config.backbone.feature_count()}, sd, rng)};
    net.fc1_.bias = {"fc1.bias", Tensor<T>(Shape{config.fc_hidden})};
    net.fc2_.weight = {"fc2.weight", detail::gaussian_tensor<T>({1, config.fc_hidden}, sd, rng)};
    net.fc2_.bias = {"fc2.bias", Tensor<T>(Shape{1})};
    return net;
  }

  const BaselineConfig& config() const { return config_; }

  /// [B,1] logits of a standardized batch.
  Var forward(Graph<T>& g, Var x, Mode mode) {
    check_input(g.value(x));
    detail::ParamBinder<T> bind{g};
    Var h = backbone_.forward(g, x, mode);
    h = nn::linear(g, h, bind(fc1_.weight), bind(fc1_.bias), mode);
    h = nn::relu(g, h);
    return nn::linear(g, h, bind(fc2_.weight), bind(fc2_.bias), mode);
  }

  Var infer(Graph<T>& g, Var x) const {
    check_input(g.value(x));
    detail::ParamBinder<T> bind{g};
    Var h = backbone_.infer(g, x);
    h = nn::linear(g, h, bind(fc1_.weight), bind(fc1_.bias), Mode::eval);
    h = nn::relu(g, h);
    return nn::linear(g, h, bind(fc2_.weight), bind(fc2_.bias), Mode::eval);
  }

  /// Eval-mode logits of raw [B,1,S,S] frames, one frame at a time.
  std::vector<double> logits(const Tensor<T>& batch) const {
    check_input(batch);
    const std::size_t S = config_.backbone.input_size;
    std::vector<double> out(batch.dim(0));
    Graph<T> g;
    for (std::size_t n = 0; n < out.size(); ++n) {
      g.reset();
      Tensor<T> one(Shape{1, 1, S, S});
      standardize_frame<T>(batch.row(n), one.values());
      out[n] = g.value(infer(g, g.input(std::move(one))))[0];
    }
    return out;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    backbone_.collect(out);
    for (auto* p : {&fc1_.weight, &fc1_.bias, &fc2_.weight, &fc2_.bias}) out.push_back(p);
    return out;
  }

  std::vector<NamedTensor<T>> state() {
    std::vector<NamedTensor<T>> out;
    for (Parameter<T>* p : parameters()) out.push_back({p->name, &p->value});
    backbone_.collect_buffers(out);
    return out;
  }

 private:
  void check_input(const Tensor<T>& x) const {
    const std::size_t S = config_.backbone.input_size;
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != S || x.dim(3) != S) {
      throw ShapeError("baseline expects [B,1," + std::to_string(S) + "," + std::to_string(S) + "] input, got " +
                       shape_str(x.shape()) + " (crop or resize first)");
    }
  }

  BaselineConfig config_;
  ConvBackbone<T> backbone_;
  LinearLayer<T> fc1_;
  LinearLayer<T> fc2_;
};

struct SingleHitPrediction {
  double probability = 0;
  HitLabel label = HitLabel::multi_hit;
};

/// Probability that `image` ([S,S] or [1,1,S,S]) is a single hit, thresholded.
template <class T>
SingleHitPrediction predict_single_hit(const BaselineNet<T>& net, const Tensor<T>& image) {
  const std::size_t S = net.config().backbone.input_size;
  if (image.size() != S * S) {
    throw ShapeError("predict_single_hit: expected a " + std::to_string(S) + "x" + std::to_string(S) +
                     " frame, got " + shape_str(image.shape()) + " (crop or resize first)");
  }
  const double p = sigmoid(net.logits(image.reshaped(Shape{1, 1, S, S}))[0]);
  return {p, single_hit_decision(p, net.config().threshold)};
}

template <class T>
std::vector<SingleHitPrediction> predict_single_hit_batch(const BaselineNet<T>& net, const Tensor<T>& batch) {
  std::vector<SingleHitPrediction> out;
  for (double z : net.logits(batch)) {
    const double p = sigmoid(z);
    out.push_back({p, single_hit_decision(p, net.config().threshold)});
  }
  return out;
}

template <class T>
Checkpoint to_checkpoint(BaselineNet<T>& net, const TrainingMetadata& meta = {}) {
  Checkpoint ck;
  ck.model_kind = "baseline";
  detail::put_backbone_config(ck, net.config().backbone);
  ck.config["fc_hidden"] = std::to_string(net.config().fc_hidden);
  ck.config["threshold"] = format_double(net.config().threshold);
  detail::put_metadata(ck, meta);
  detail::put_state<T>(ck, net);
  return ck;
}

template <class T = float>
BaselineNet<T> baseline_from_checkpoint(const Checkpoint& ck) {
  if (ck.model_kind != "baseline") {
    throw CheckpointError("checkpoint holds a '" + ck.model_kind + "' model, expected 'baseline'");
  }
  BaselineConfig config;
  config.backbone = detail::get_backbone_config(ck);
  config.fc_hidden = std::stoul(ck.config_value("fc_hidden"));
  config.threshold = parse_double(ck.config_value("threshold"));
  BaselineNet<T> net = BaselineNet<T>::build(config, 0);
  detail::get_state<T>(ck, net);
  return net;
}

struct BaselineTrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct BaselineEpochMetrics {
  std::size_t epoch = 0;
  double loss = 0;
  double accuracy = 0;  // on the training batches, train-mode logits at threshold 0.5
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;  // eval mode, configured threshold
};

inline nlohmann::json to_json(const BaselineEpochMetrics& m) {
  nlohmann::json j{{"epoch", m.epoch}, {"loss", m.loss}, {"accuracy", m.accuracy}};
  if (m.val_loss) j["val_loss"] = *m.val_loss;
  if (m.val_accuracy) j["val_accuracy"] = *m.val_accuracy;
  return j;
}

struct BaselineTrainResult {
  std::vector<BaselineEpochMetrics> history;
  std::size_t best_epoch = 0;
};

inline std::vector<float> single_hit_targets(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<float> y;
  for (std::size_t i : idx) y.push_back(is_single_hit_target(ds.record(i).label) ? 1.0f : 0.0f);
  return y;
}

template <class T>
std::pair<double, double> baseline_eval_loss(const BaselineNet<T>& net, const Dataset& pool) {
  const auto z = net.logits(pool.frames().template cast<T>());
  double loss = 0, correct = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double y = is_single_hit_target(pool.record(i).label) ? 1 : 0;
    loss += std::max(z[i], 0.0) - z[i] * y + std::log1p(std::exp(-std::abs(z[i])));
    const bool pred = single_hit_decision(sigmoid(z[i]), net.config().threshold) == HitLabel::single_hit;
    correct += pred == (y == 1);
  }
  return {loss / static_cast<double>(z.size()), correct / static_cast<double>(z.size())};
}

/// Binary cross-entropy training with Adam; keeps the parameters of the epoch
/// with the lowest validation loss when a validation pool is given.
template <class T>
BaselineTrainResult train_baseline(BaselineNet<T>& net, const Dataset& train_pool, const Dataset* val_pool,
                                   const BaselineTrainConfig& config,
                                   const std::function<void(const BaselineEpochMetrics&)>& on_epoch = {}) {
  if (config.batch_size < 2) throw std::invalid_argument("train_baseline: batch_size must be at least 2");
  std::size_t positives = 0;
  for (const auto& r : train_pool.records()) positives += is_single_hit_target(r.label);
  if (positives == 0 || positives == train_pool.size()) {
    throw std::invalid_argument("train_baseline: training pool holds a single class (" + std::to_string(positives) +
                                " single_hit of " + std::to_string(train_pool.size()) + ")");
  }
  AdamState<T> adam;
  adam.learning_rate = config.learning_rate;
  auto params = net.parameters();
  BaselineTrainResult r;
  std::optional<Checkpoint> best;
  double best_loss = 0;
  Graph<T> g;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    Rng rng = make_stream(config.seed, e, 0xba5e);
    BaselineEpochMetrics m;
    m.epoch = e;
    double loss_sum = 0, correct = 0;
    std::size_t seen = 0;
    for (const auto& idx : detail::make_batches(train_pool.size(), config.batch_size, rng)) {
      if (idx.size() < 2) continue;
      g.reset();
      Var z = net.forward(g, g.input(standardize_batch(train_pool.frames(idx).template cast<T>())), Mode::train);
      const auto y = single_hit_targets(train_pool, idx);
      Var loss = nn::bce_with_logits(g, z, y);
      for (std::size_t i = 0; i < idx.size(); ++i) correct += (g.value(z)[i] >= 0) == (y[i] == 1.0f);
      loss_sum += g.value(loss)[0] * static_cast<double>(idx.size());
      seen += idx.size();
      zero_grads<T>(params);
      g.backward(loss);
      adam_step<T>(params, adam);
    }
    m.loss = seen ? loss_sum / static_cast<double>(seen) : 0;
    m.accuracy = seen ? correct / static_cast<double>(seen) : 0;
    if (val_pool && !val_pool->empty()) {
      const auto [vl, va] = baseline_eval_loss(net, *val_pool);
      m.val_loss = vl;
      m.val_accuracy = va;
      if (!best || vl < best_loss) {
        best_loss = vl;
        r.best_epoch = e;
        best = to_checkpoint(net, TrainingMetadata{config.seed, e, vl});
      }
    }
    r.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  if (best) net = baseline_from_checkpoint<T>(*best);
  else if (!r.history.empty()) r.best_epoch = r.history.size() - 1;
  return r;
}

template <class T>
void save_baseline(BaselineNet<T>& net, const std::filesystem::path& dir, const TrainingMetadata& meta = {}) {
  write_checkpoint(to_checkpoint(net, meta), dir);
}

template <class T = float>
BaselineNet<T> load_baseline(const std::filesystem::path& dir, TrainingMetadata* meta = nullptr) {
  Checkpoint ck = read_checkpoint(dir);
  if (meta) *meta = detail::get_metadata(ck);
  return baseline_from_checkpoint<T>(ck);
}

}  // namespace specklenn
