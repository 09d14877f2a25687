#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "specklenn/autodiff.hpp"
#include "specklenn/rng.hpp"

namespace specklenn {

/// Conv stack shared by the embedding network and the binary baseline:
/// (conv5x5 -> ReLU -> BN -> maxpool2) x 2, flattened.
struct BackboneConfig {
  std::size_t input_size = 96;
  std::size_t conv1_out_channels = 32;
  std::size_t conv2_out_channels = 64;
  std::size_t kernel_size = 5;
  double init_std = 0.2;

  std::size_t conv1_extent() const { return input_size + 1 - kernel_size; }
  std::size_t pool1_extent() const { return conv1_extent() / 2; }
  std::size_t conv2_extent() const { return pool1_extent() + 1 - kernel_size; }
  std::size_t pool2_extent() const { return conv2_extent() / 2; }
  std::size_t feature_count() const {
    return conv2_out_channels * pool2_extent() * pool2_extent();
  }

  void validate() const {
    const auto bad = [](const std::string& what) { throw std::invalid_argument("backbone config: " + what); };
    if (kernel_size == 0) bad("kernel_size must be positive");
    if (conv1_out_channels == 0 || conv2_out_channels == 0) bad("channel counts must be positive");
    if (!(init_std > 0)) bad("init_std must be positive");
    if (input_size < kernel_size) bad("input_size smaller than kernel");
    if (conv1_extent() < 2) bad("conv1 output extent < 2, pooling impossible");
    if (pool1_extent() < kernel_size) bad("pool1 extent smaller than kernel");
    if (conv2_extent() < 2) bad("conv2 output extent < 2, pooling impossible");
  }
};

struct EmbeddingNetConfig {
  BackboneConfig backbone{};
  std::size_t fc_hidden = 512;
  std::size_t embedding_dim = 128;

  void validate() const {
    backbone.validate();
    if (fc_hidden == 0) throw std::invalid_argument("embedding config: fc_hidden must be positive");
    if (embedding_dim < 2) throw std::invalid_argument("embedding config: embedding_dim must be >= 2");
  }

  friend bool operator==(const EmbeddingNetConfig& a, const EmbeddingNetConfig& b) {
    return a.backbone.input_size == b.backbone.input_size &&
           a.backbone.conv1_out_channels == b.backbone.conv1_out_channels &&
           a.backbone.conv2_out_channels == b.backbone.conv2_out_channels &&
           a.backbone.kernel_size == b.backbone.kernel_size &&
           a.backbone.init_std == b.backbone.init_std && a.fc_hidden == b.fc_hidden &&
           a.embedding_dim == b.embedding_dim;
  }
};

inline constexpr double kStandardizeEpsilon = 1e-8;

/// Per-frame standardization applied before either network sees a frame:
/// subtract the mean, divide by (std + 1e-8).
template <class T>
void standardize_frame(std::span<const T> in, std::span<T> out) {
  double s = 0, s2 = 0;
  for (T v : in) s += v;
  const double mean = s / static_cast<double>(in.size());
  for (T v : in) s2 += (v - mean) * (v - mean);
  const double sd = std::sqrt(s2 / static_cast<double>(in.size()));
  const double inv = 1.0 / (sd + kStandardizeEpsilon);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<T>((in[i] - mean) * inv);
}

template <class T>
Tensor<T> standardize_batch(const Tensor<T>& batch) {
  Tensor<T> out(batch.shape());
  for (std::size_t n = 0; n < batch.dim(0); ++n) standardize_frame<T>(batch.row(n), out.row(n));
  return out;
}

namespace detail {

template <class T>
Tensor<T> gaussian_tensor(Shape shape, double std, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

// How a model's parameters enter a graph: tracked (gradients flow into the
// Parameter) or as frozen constants.
template <class T>
struct ParamBinder {
  Graph<T>& g;
  Var operator()(Parameter<T>& p) const { return g.parameter(p); }
  Var operator()(const Parameter<T>& p) const { return g.constant(p.value); }
};

}  // namespace detail

template <class T = float>
struct Conv2dLayer {
  Parameter<T> weight;
  Parameter<T> bias;
};

template <class T = float>
struct BatchNorm2dLayer {
  Parameter<T> weight;
  Parameter<T> bias;
  BatchNormState<T> stats;
};

template <class T = float>
struct LinearLayer {
  Parameter<T> weight;
  Parameter<T> bias;
};

/// Named view of every persistent tensor of a model, parameters first.
template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
};

template <class T = float>
class ConvBackbone {
 public:
  ConvBackbone() = default;

  /// Weights ~ N(0, init_std^2) drawn from `rng` in layer order; biases zero;
  /// batch-norm scale 1, shift 0.
  ConvBackbone(const BackboneConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t k = config_.kernel_size, c1 = config_.conv1_out_channels,
                      c2 = config_.conv2_out_channels;
    conv1_.weight = {"conv1.weight", detail::gaussian_tensor<T>({c1, 1, k, k}, config_.init_std, rng)};
    conv1_.bias = {"conv1.bias", Tensor<T>(Shape{c1})};
    bn1_.weight = {"bn1.weight", Tensor<T>(Shape{c1}, T{1})};
    bn1_.bias = {"bn1.bias", Tensor<T>(Shape{c1})};
    bn1_.stats = BatchNormState<T>(c1);
    conv2_.weight = {"conv2.weight", detail::gaussian_tensor<T>({c2, c1, k, k}, config_.init_std, rng)};
    conv2_.bias = {"conv2.bias", Tensor<T>(Shape{c2})};
    bn2_.weight = {"bn2.weight", Tensor<T>(Shape{c2}, T{1})};
    bn2_.bias = {"bn2.bias", Tensor<T>(Shape{c2})};
    bn2_.stats = BatchNormState<T>(c2);
  }

  const BackboneConfig& config() const { return config_; }

  /// Trainable forward; batch-norm statistics update in train mode.
  Var forward(Graph<T>& g, Var x, Mode mode) {
    detail::ParamBinder<T> bind{g};
    Var h = nn::conv2d(g, x, bind(conv1_.weight), bind(conv1_.bias));
    h = nn::relu(g, h);
    h = nn::batchnorm2d(g, h, bind(bn1_.weight), bind(bn1_.bias), bn1_.stats, mode);
    h = nn::maxpool2d(g, h);
    h = nn::conv2d(g, h, bind(conv2_.weight), bind(conv2_.bias));
    h = nn::relu(g, h);
    h = nn::batchnorm2d(g, h, bind(bn2_.weight), bind(bn2_.bias), bn2_.stats, mode);
    h = nn::maxpool2d(g, h);
    return nn::flatten(g, h);
  }

  /// Frozen eval-mode forward.
  Var infer(Graph<T>& g, Var x) const {
    detail::ParamBinder<T> bind{g};
    Var h = nn::conv2d(g, x, bind(conv1_.weight), bind(conv1_.bias));
    h = nn::relu(g, h);
    h = nn::batchnorm2d(g, h, bind(bn1_.weight), bind(bn1_.bias), bn1_.stats);
    h = nn::maxpool2d(g, h);
    h = nn::conv2d(g, h, bind(conv2_.weight), bind(conv2_.bias));
    h = nn::relu(g, h);
    h = nn::batchnorm2d(g, h, bind(bn2_.weight), bind(bn2_.bias), bn2_.stats);
    h = nn::maxpool2d(g, h);
    return nn::flatten(g, h);
  }

  void collect(std::vector<Parameter<T>*>& out) {
    for (auto* p : {&conv1_.weight, &conv1_.bias, &bn1_.weight, &bn1_.bias, &conv2_.weight,
                    &conv2_.bias, &bn2_.weight, &bn2_.bias})
      out.push_back(p);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : {&conv1_.weight, &conv1_.bias, &bn1_.weight, &bn1_.bias, &conv2_.weight,
                          &conv2_.bias, &bn2_.weight, &bn2_.bias})
      n += p->value.size();
    return n;
  }

  void collect_buffers(std::vector<NamedTensor<T>>& out) {
    out.push_back({"bn1.running_mean", &bn1_.stats.running_mean});
    out.push_back({"bn1.running_var", &bn1_.stats.running_var});
    out.push_back({"bn2.running_mean", &bn2_.stats.running_mean});
    out.push_back({"bn2.running_var", &bn2_.stats.running_var});
  }

 private:
  BackboneConfig config_;
  Conv2dLayer<T> conv1_;
  BatchNorm2dLayer<T> bn1_;
  Conv2dLayer<T> conv2_;
  BatchNorm2dLayer<T> bn2_;
};

/// Backbone -> FC -> ReLU -> FC -> L2 normalization. Maps a single-channel
/// frame to a point on the unit hypersphere in R^embedding_dim.
template <class T = float>
class EmbeddingNet {
 public:
  EmbeddingNet() = default;

  static EmbeddingNet build(const EmbeddingNetConfig& config, std::uint64_t seed) {
    config.validate();
    EmbeddingNet net;
    net.config_ = config;
    Rng rng(seed);
    net.backbone_ = ConvBackbone<T>(config.backbone, rng);
    const std::size_t f = config.backbone.feature_count();
    const double sd = config.backbone.init_std;
    net.fc1_.weight = {"fc1.weight", detail::gaussian_tensor<T>({config.fc_hidden, f}, sd, rng)};
    net.fc1_.bias = {"fc1.bias", Tensor<T>(Shape{config.fc_hidden})};
    net.fc2_.weight = {"fc2.weight",
                       detail::gaussian_tensor<T>({config.embedding_dim, config.fc_hidden}, sd, rng)};
    net.fc2_.bias = {"fc2.bias", Tensor<T>(Shape{config.embedding_dim})};
    return net;
  }

  const EmbeddingNetConfig& config() const { return config_; }
  std::size_t embedding_dim() const { return config_.embedding_dim; }

  /// Trainable forward of an already standardized [B,1,S,S] batch.
  Var forward(Graph<T>& g, Var x, Mode mode) {
    check_input(g.value(x));
    detail::ParamBinder<T> bind{g};
    Var h = backbone_.forward(g, x, mode);
    h = nn::linear(g, h, bind(fc1_.weight), bind(fc1_.bias), mode);
    h = nn::relu(g, h);
    h = nn::linear(g, h, bind(fc2_.weight), bind(fc2_.bias), mode);
    return nn::l2_normalize(g, h);
  }

  /// Frozen eval-mode forward of an already standardized batch.
  Var infer(Graph<T>& g, Var x) const {
    check_input(g.value(x));
    detail::ParamBinder<T> bind{g};
    Var h = backbone_.infer(g, x);
    h = nn::linear(g, h, bind(fc1_.weight), bind(fc1_.bias), Mode::eval);
    h = nn::relu(g, h);
    h = nn::linear(g, h, bind(fc2_.weight), bind(fc2_.bias), Mode::eval);
    return nn::l2_normalize(g, h);
  }

  /// Eval-mode embeddings of raw frames [B,1,S,S] -> [B,d]. Frames are
  /// embedded one at a time, so a row never depends on its batch mates.
  Tensor<T> embed(const Tensor<T>& batch) const {
    check_input(batch);
    const std::size_t B = batch.dim(0), S = config_.backbone.input_size;
    Tensor<T> out(Shape{B, config_.embedding_dim});
    Graph<T> g;
    for (std::size_t n = 0; n < B; ++n) {
      g.reset();
      Tensor<T> one(Shape{1, 1, S, S});
      standardize_frame<T>(batch.row(n), one.values());
      Var y = infer(g, g.input(std::move(one)));
      const Tensor<T>& e = g.value(y);
      std::copy(e.data(), e.data() + e.size(), out.row(n).data());
    }
    return out;
  }

  /// Embeddings in the requested mode; train mode normalizes with batch
  /// statistics and advances the running statistics.
  Tensor<T> embed(const Tensor<T>& batch, Mode mode) {
    if (mode == Mode::eval) return std::as_const(*this).embed(batch);
    Graph<T> g;
    Var y = forward(g, g.input(standardize_batch(batch)), mode);
    return g.value(y);
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    backbone_.collect(out);
    for (auto* p : {&fc1_.weight, &fc1_.bias, &fc2_.weight, &fc2_.bias}) out.push_back(p);
    return out;
  }

  /// Parameters followed by batch-norm running statistics.
  std::vector<NamedTensor<T>> state() {
    std::vector<NamedTensor<T>> out;
    for (Parameter<T>* p : parameters()) out.push_back({p->name, &p->value});
    backbone_.collect_buffers(out);
    return out;
  }

  std::size_t parameter_count() const {
    return backbone_.parameter_count() + fc1_.weight.value.size() + fc1_.bias.value.size() +
           fc2_.weight.value.size() + fc2_.bias.value.size();
  }

 private:
  void check_input(const Tensor<T>& x) const {
    const std::size_t S = config_.backbone.input_size;
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != S || x.dim(3) != S) {
      throw ShapeError("embedding net expects [B,1," + std::to_string(S) + "," +
                       std::to_string(S) + "] input, got " + shape_str(x.shape()) +
                       " (crop or resize first)");
    }
  }

  EmbeddingNetConfig config_;
  ConvBackbone<T> backbone_;
  LinearLayer<T> fc1_;
  LinearLayer<T> fc2_;
};

}  // namespace specklenn
