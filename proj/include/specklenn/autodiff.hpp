#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "specklenn/tensor.hpp"

namespace specklenn {

enum class Mode { train, eval };

/// A trainable tensor with its accumulated gradient.
template <class T = float>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }
};

/// Which linear piece each piecewise-linear op selected (ReLU signs, pooling
/// winners, hinge activity), recorded on one pass and replayed on later ones.
/// A replayed graph evaluates the smooth extension of the recorded piece, so
/// finite-difference probes measure the derivative the backward pass computes
/// instead of the jump across a kink.
class PiecewiseTape {
 public:
  void record() {
    replay_ = false;
    entries_.clear();
    cursor_ = 0;
  }
  void replay() {
    replay_ = true;
    cursor_ = 0;
  }
  bool replaying() const noexcept { return replay_; }

  template <class Idx>
  void apply(std::vector<Idx>& choice) {
    if (!replay_) {
      entries_.emplace_back(choice.begin(), choice.end());
      return;
    }
    if (cursor_ >= entries_.size() || entries_[cursor_].size() != choice.size()) {
      throw std::logic_error("piecewise replay does not match the recorded graph");
    }
    const auto& e = entries_[cursor_++];
    for (std::size_t i = 0; i < e.size(); ++i) choice[i] = static_cast<Idx>(e[i]);
  }

 private:
  std::vector<std::vector<std::size_t>> entries_;
  std::size_t cursor_ = 0;
  bool replay_ = false;
};

/// Handle to a node recorded in a Graph.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
/// tape backwards visits every node after all of its consumers.
template <class T = float>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&)>;

  Var input(Tensor<T> value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, requires_grad, nullptr, {}});
    return Var{nodes_.size() - 1};
  }

  /// Binds an external tensor without copying; it must outlive the graph.
  Var constant(const Tensor<T>& value) {
    nodes_.push_back(Node{{}, &value, {}, false, nullptr, {}});
    return Var{nodes_.size() - 1};
  }

  /// Binds a trainable parameter by reference; backward() adds into p.grad.
  Var parameter(Parameter<T>& p) {
    nodes_.push_back(Node{{}, &p.value, {}, true, &p, {}});
    return Var{nodes_.size() - 1};
  }

  /// Appends an op result. The node only tracks gradients when a parent does.
  /// References returned by value() stay valid as the tape grows.
  Var record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (Var p : parents) needs = needs || node(p).requires_grad;
    nodes_.push_back(
        Node{std::move(value), nullptr, {}, needs, nullptr, needs ? std::move(fn) : BackwardFn{}});
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = node(v);
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient buffer of `v`, zero-initialised on first touch.
  Tensor<T>& grad_buffer(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad = Tensor<T>(value(v).shape());
    return n.grad;
  }

  bool has_grad(Var v) const { return !node(v).grad.empty(); }

  const Tensor<T>& grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) throw std::logic_error("no gradient reached node " + std::to_string(v.id));
    return n.grad;
  }

  void backward(Var loss) {
    if (backward_done_) {
      throw std::logic_error("backward already ran on this graph; call reset() first");
    }
    if (value(loss).size() != 1) {
      throw ShapeError("backward needs a scalar loss, got shape " + shape_str(value(loss).shape()));
    }
    backward_done_ = true;
    if (!node(loss).requires_grad) return;
    grad_buffer(loss)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this);
      if (n.param) {
        T* dst = n.param->grad.data();
        const T* src = n.grad.data();
        for (std::size_t k = 0; k < n.grad.size(); ++k) dst[k] += src[k];
      }
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  void set_piecewise_tape(PiecewiseTape* tape) noexcept { tape_ = tape; }
  PiecewiseTape* piecewise_tape() const noexcept { return tape_; }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Node& node(Var v) { return nodes_.at(v.id); }
  const Node& node(Var v) const { return nodes_.at(v.id); }

  std::deque<Node> nodes_;
  bool backward_done_ = false;
  PiecewiseTape* tape_ = nullptr;
};

/// Running statistics carried by a batch-normalization layer.
template <class T = float>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

namespace nn {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

// Fixed-order dot product: 16 independent lanes then a pairwise fold. The
// summation order depends only on n, never on addresses or batch size.
template <class T>
inline T dot_stable(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T acc[kLanes] = {};
  std::size_t k = 0;
  for (; k + kLanes <= n; k += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[k + l] * b[k + l];
  }
  T tail{0};
  for (; k < n; ++k) tail += a[k] * b[k];
  for (std::size_t w = kLanes / 2; w > 0; w /= 2) {
    for (std::size_t l = 0; l < w; ++l) acc[l] += acc[l + w];
  }
  return acc[0] + tail;
}

template <class T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t KH,
            std::size_t KW, T* cols) {
  const std::size_t Ho = H - KH + 1, Wo = W - KW + 1;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ki = 0; ki < KH; ++ki)
      for (std::size_t kj = 0; kj < KW; ++kj) {
        T* dst = cols + ((c * KH + ki) * KW + kj) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const T* src = x + (c * H + oy + ki) * W + kj;
          std::copy(src, src + Wo, dst + oy * Wo);
        }
      }
}

template <class T>
void col2im_add(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t KH,
                std::size_t KW, T* dx) {
  const std::size_t Ho = H - KH + 1, Wo = W - KW + 1;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ki = 0; ki < KH; ++ki)
      for (std::size_t kj = 0; kj < KW; ++kj) {
        const T* src = cols + ((c * KH + ki) * KW + kj) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          T* dst = dx + (c * H + oy + ki) * W + kj;
          const T* s = src + oy * Wo;
          for (std::size_t ox = 0; ox < Wo; ++ox) dst[ox] += s[ox];
        }
      }
}

}  // namespace detail

/// Valid (no padding), stride-1 cross-correlation.
/// x: [B, Cin, H, W], w: [Cout, Cin, KH, KW], b: [Cout] -> [B, Cout, H-KH+1, W-KW+1]
template <class T>
Var conv2d(Graph<T>& g, Var x, Var w, std::optional<Var> b = std::nullopt) {
  const Tensor<T>& X = g.value(x);
  const Tensor<T>& Wt = g.value(w);
  detail::require(X.rank() == 4, "conv2d: input must be [B,C,H,W], got " + shape_str(X.shape()));
  detail::require(Wt.rank() == 4, "conv2d: kernel must be [Cout,Cin,KH,KW], got " + shape_str(Wt.shape()));
  const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const std::size_t Co = Wt.dim(0), KH = Wt.dim(2), KW = Wt.dim(3);
  detail::require(Wt.dim(1) == C, "conv2d: kernel expects " + std::to_string(Wt.dim(1)) +
                                      " input channels, input has " + std::to_string(C) +
                                      " (input " + shape_str(X.shape()) + ", kernel " +
                                      shape_str(Wt.shape()) + ")");
  detail::require(H >= KH && W >= KW, "conv2d: input " + shape_str(X.shape()) +
                                          " smaller than kernel " + shape_str(Wt.shape()));
  if (b) {
    detail::require(g.value(*b).shape() == Shape{Co},
                    "conv2d: bias must be [" + std::to_string(Co) + "], got " +
                        shape_str(g.value(*b).shape()));
  }
  const std::size_t Ho = H - KH + 1, Wo = W - KW + 1, P = Ho * Wo, K = C * KH * KW;

  Tensor<T> out(Shape{B, Co, Ho, Wo});
  std::vector<T> cols(K * P);
  detail::ConstMatMap<T> Wm(Wt.data(), Co, K);
  for (std::size_t n = 0; n < B; ++n) {
    detail::im2col(X.data() + n * C * H * W, C, H, W, KH, KW, cols.data());
    detail::MatMap<T> Y(out.data() + n * Co * P, Co, P);
    Y.noalias() = Wm * detail::ConstMatMap<T>(cols.data(), K, P);
    if (b) {
      const Tensor<T>& bias = g.value(*b);
      for (std::size_t o = 0; o < Co; ++o) Y.row(o).array() += bias[o];
    }
  }

  Var self{g.size()};
  auto fn = [=](Graph<T>& gr) {
    const Tensor<T>& Xv = gr.value(x);
    const Tensor<T>& Wv = gr.value(w);
    const Tensor<T>& dY = gr.grad(self);
    detail::ConstMatMap<T> Wm2(Wv.data(), Co, K);
    std::vector<T> c(K * P), dc;
    const bool want_x = gr.requires_grad(x), want_w = gr.requires_grad(w);
    for (std::size_t n = 0; n < B; ++n) {
      detail::ConstMatMap<T> dYn(dY.data() + n * Co * P, Co, P);
      if (want_w) {
        detail::im2col(Xv.data() + n * C * H * W, C, H, W, KH, KW, c.data());
        detail::MatMap<T> dW(gr.grad_buffer(w).data(), Co, K);
        dW.noalias() += dYn * detail::ConstMatMap<T>(c.data(), K, P).transpose();
      }
      if (b && gr.requires_grad(*b)) {
        Tensor<T>& db = gr.grad_buffer(*b);
        for (std::size_t o = 0; o < Co; ++o) db[o] += dYn.row(o).sum();
      }
      if (want_x) {
        dc.resize(K * P);
        detail::MatMap<T> dC(dc.data(), K, P);
        dC.noalias() = Wm2.transpose() * dYn;
        detail::col2im_add(dc.data(), C, H, W, KH, KW, gr.grad_buffer(x).data() + n * C * H * W);
      }
    }
  };
  if (b) return g.record(std::move(out), {x, w, *b}, fn);
  return g.record(std::move(out), {x, w}, fn);
}

/// max(x, 0); the subgradient at exactly zero is taken as 0.
template <class T>
Var relu(Graph<T>& g, Var x) {
  const Tensor<T>& X = g.value(x);
  auto mask = std::make_shared<std::vector<unsigned char>>(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) (*mask)[i] = X[i] > T{0};
  if (PiecewiseTape* tape = g.piecewise_tape()) tape->apply(*mask);
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = (*mask)[i] ? X[i] : T{0};
  Var self{g.size()};
  return g.record(std::move(out), {x}, [=](Graph<T>& gr) {
    const Tensor<T>& dY = gr.grad(self);
    Tensor<T>& dX = gr.grad_buffer(x);
    for (std::size_t i = 0; i < dY.size(); ++i)
      if ((*mask)[i]) dX[i] += dY[i];
  });
}

namespace detail {

template <class T>
Var batchnorm2d_impl(Graph<T>& g, Var x, Var gamma, Var beta, const BatchNormState<T>& state,
                     BatchNormState<T>* update, Mode mode) {
  const Tensor<T>& X = g.value(x);
  detail::require(X.rank() == 4, "batchnorm2d: input must be [B,C,H,W], got " + shape_str(X.shape()));
  const std::size_t B = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3), M = B * HW;
  detail::require(g.value(gamma).shape() == Shape{C} && g.value(beta).shape() == Shape{C},
                  "batchnorm2d: scale/shift must be [" + std::to_string(C) + "]");
  detail::require(state.running_mean.shape() == Shape{C},
                  "batchnorm2d: running statistics have wrong channel count");
  if (mode == Mode::train && M < 2) {
    throw std::invalid_argument(
        "batchnorm2d: train mode needs at least 2 values per channel (variance undefined)");
  }
  const Tensor<T>& G = g.value(gamma);
  const Tensor<T>& Bt = g.value(beta);

  std::vector<T> mean(C), inv_std(C);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0, s2 = 0;
      for (std::size_t n = 0; n < B; ++n) {
        const T* p = X.data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(M);
      for (std::size_t n = 0; n < B; ++n) {
        const T* p = X.data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = p[i] - mu;
          s2 += d * d;
        }
      }
      const double var = s2 / static_cast<double>(M);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + state.eps));
      if (update) {
        const double unbiased = s2 / static_cast<double>(M - 1);
        update->running_mean[c] = static_cast<T>((1.0 - update->momentum) * update->running_mean[c] +
                                                 update->momentum * mu);
        update->running_var[c] = static_cast<T>((1.0 - update->momentum) * update->running_var[c] +
                                                update->momentum * unbiased);
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + state.eps));
    }
  }

  Tensor<T> xhat(X.shape());
  Tensor<T> out(X.shape());
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const T h = (X[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = G[c] * h + Bt[c];
      }
    }

  Var self{g.size()};
  const bool training = mode == Mode::train;
  auto saved = std::make_shared<Tensor<T>>(std::move(xhat));
  return g.record(std::move(out), {x, gamma, beta}, [=](Graph<T>& gr) {
    const Tensor<T>& dY = gr.grad(self);
    const Tensor<T>& Gv = gr.value(gamma);
    const Tensor<T>& H = *saved;
    std::vector<double> sum_dy(C, 0.0), sum_dy_h(C, 0.0);
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t off = (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          sum_dy[c] += dY[off + i];
          sum_dy_h[c] += static_cast<double>(dY[off + i]) * H[off + i];
        }
      }
    if (gr.requires_grad(gamma)) {
      Tensor<T>& dG = gr.grad_buffer(gamma);
      for (std::size_t c = 0; c < C; ++c) dG[c] += static_cast<T>(sum_dy_h[c]);
    }
    if (gr.requires_grad(beta)) {
      Tensor<T>& dB = gr.grad_buffer(beta);
      for (std::size_t c = 0; c < C; ++c) dB[c] += static_cast<T>(sum_dy[c]);
    }
    if (!gr.requires_grad(x)) return;
    Tensor<T>& dX = gr.grad_buffer(x);
    const double Md = static_cast<double>(M);
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t off = (n * C + c) * HW;
        const double k = static_cast<double>(Gv[c]) * inv_std[c];
        if (training) {
          const double m1 = sum_dy[c] / Md, m2 = sum_dy_h[c] / Md;
          for (std::size_t i = 0; i < HW; ++i)
            dX[off + i] += static_cast<T>(k * (dY[off + i] - m1 - H[off + i] * m2));
        } else {
          for (std::size_t i = 0; i < HW; ++i) dX[off + i] += static_cast<T>(k * dY[off + i]);
        }
      }
  });
}

}  // namespace detail

/// Per-channel batch normalization over (B, H, W). Train mode normalizes with
/// the biased batch variance and folds the unbiased estimate into the running
/// statistics (momentum 0.1); eval mode uses the running statistics only.
template <class T>
Var batchnorm2d(Graph<T>& g, Var x, Var gamma, Var beta, BatchNormState<T>& state, Mode mode) {
  return detail::batchnorm2d_impl(g, x, gamma, beta, state, &state, mode);
}

/// Eval-mode batch normalization against frozen statistics.
template <class T>
Var batchnorm2d(Graph<T>& g, Var x, Var gamma, Var beta, const BatchNormState<T>& state) {
  return detail::batchnorm2d_impl<T>(g, x, gamma, beta, state, nullptr, Mode::eval);
}

/// 2x2 max pooling with stride 2. Ties route the gradient to the first element
/// in row-major window order.
template <class T>
Var maxpool2d(Graph<T>& g, Var x) {
  const Tensor<T>& X = g.value(x);
  detail::require(X.rank() == 4, "maxpool2d: input must be [B,C,H,W], got " + shape_str(X.shape()));
  const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  detail::require(H >= 2 && W >= 2, "maxpool2d: spatial extents must be >= 2, got " + shape_str(X.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out(Shape{B, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t nc = 0; nc < B * C; ++nc) {
    const T* src = X.data() + nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (2 * oy) * W + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * oy + dy) * W + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        (*argmax)[nc * Ho * Wo + oy * Wo + ox] = nc * H * W + best;
      }
  }
  if (PiecewiseTape* tape = g.piecewise_tape()) tape->apply(*argmax);
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = X[(*argmax)[o]];
  Var self{g.size()};
  return g.record(std::move(out), {x}, [=](Graph<T>& gr) {
    const Tensor<T>& dY = gr.grad(self);
    Tensor<T>& dX = gr.grad_buffer(x);
    for (std::size_t o = 0; o < dY.size(); ++o) dX[(*argmax)[o]] += dY[o];
  });
}

/// [B, ...] -> [B, prod(...)]
template <class T>
Var flatten(Graph<T>& g, Var x) {
  const Tensor<T>& X = g.value(x);
  const std::size_t B = X.dim(0);
  Var self{g.size()};
  return g.record(X.reshaped(Shape{B, X.size() / B}), {x}, [=](Graph<T>& gr) {
    const Tensor<T>& dY = gr.grad(self);
    Tensor<T>& dX = gr.grad_buffer(x);
    for (std::size_t i = 0; i < dY.size(); ++i) dX[i] += dY[i];
  });
}

/// y = x W^T + b. x: [B, Nin], w: [Nout, Nin], b: [Nout].
/// Eval mode computes each row with a fixed-order reduction, making every
/// output row independent of the batch it is computed in.
template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var b, Mode mode = Mode::eval) {
  const Tensor<T>& X = g.value(x);
  const Tensor<T>& Wt = g.value(w);
  const Tensor<T>& Bv = g.value(b);
  detail::require(X.rank() == 2 && Wt.rank() == 2,
                  "linear: expected input [B,Nin] and weight [Nout,Nin], got " +
                      shape_str(X.shape()) + " and " + shape_str(Wt.shape()));
  const std::size_t B = X.dim(0), Nin = X.dim(1), Nout = Wt.dim(0);
  detail::require(Wt.dim(1) == Nin, "linear: weight " + shape_str(Wt.shape()) +
                                        " does not accept input " + shape_str(X.shape()));
  detail::require(Bv.shape() == Shape{Nout},
                  "linear: bias must be [" + std::to_string(Nout) + "], got " + shape_str(Bv.shape()));
  Tensor<T> out(Shape{B, Nout});
  if (mode == Mode::eval) {
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t o = 0; o < Nout; ++o)
        out.at(n, o) = detail::dot_stable(X.data() + n * Nin, Wt.data() + o * Nin, Nin) + Bv[o];
  } else {
    detail::MatMap<T> Y(out.data(), B, Nout);
    Y.noalias() = detail::ConstMatMap<T>(X.data(), B, Nin) *
                  detail::ConstMatMap<T>(Wt.data(), Nout, Nin).transpose();
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t o = 0; o < Nout; ++o) out.at(n, o) += Bv[o];
  }
  Var self{g.size()};
  return g.record(std::move(out), {x, w, b}, [=](Graph<T>& gr) {
    const Tensor<T>& dY = gr.grad(self);
    detail::ConstMatMap<T> dYm(dY.data(), B, Nout);
    if (gr.requires_grad(x)) {
      detail::MatMap<T> dX(gr.grad_buffer(x).data(), B, Nin);
      dX.noalias() += dYm * detail::ConstMatMap<T>(gr.value(w).data(), Nout, Nin);
    }
    if (gr.requires_grad(w)) {
      detail::MatMap<T> dW(gr.grad_buffer(w).data(), Nout, Nin);
      dW.noalias() += dYm.transpose() * detail::ConstMatMap<T>(gr.value(x).data(), B, Nin);
    }
    if (gr.requires_grad(b)) {
      Tensor<T>& db = gr.grad_buffer(b);
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t o = 0; o < Nout; ++o) db[o] += dY.at(n, o);
    }
  });
}

inline constexpr double kNormEpsilon = 1e-12;

/// Scales every row of [B, d] to unit Euclidean length.
template <class T>
Var l2_normalize(Graph<T>& g, Var x) {
  const Tensor<T>& X = g.value(x);
  detail::require(X.rank() == 2, "l2_normalize: input must be [B,d], got " + shape_str(X.shape()));
  const std::size_t B = X.dim(0), D = X.dim(1);
  Tensor<T> out(X.shape());
  auto norms = std::make_shared<std::vector<T>>(B);
  for (std::size_t n = 0; n < B; ++n) {
    double s = 0;
    for (std::size_t k = 0; k < D; ++k) s += static_cast<double>(X.at(n, k)) * X.at(n, k);
    const double norm = std::sqrt(s);
    if (!(norm > kNormEpsilon)) {
      throw std::domain_error("l2_normalize: row " + std::to_string(n) + " has norm " +
                              std::to_string(norm) + " <= 1e-12");
    }
    (*norms)[n] = static_cast<T>(norm);
    for (std::size_t k = 0; k < D; ++k) out.at(n, k) = static_cast<T>(X.at(n, k) / norm);
  }
  Var self{g.size()};
  return g.record(std::move(out), {x}, [=](Graph<T>& gr) {
    const Tensor<T>& Y = gr.value(self);
    const Tensor<T>& dY = gr.grad(self);
    Tensor<T>& dX = gr.grad_buffer(x);
    for (std::size_t n = 0; n < B; ++n) {
      double proj = 0;
      for (std::size_t k = 0; k < D; ++k) proj += static_cast<double>(Y.at(n, k)) * dY.at(n, k);
      const double inv = 1.0 / (*norms)[n];
      for (std::size_t k = 0; k < D; ++k)
        dX.at(n, k) += static_cast<T>((dY.at(n, k) - Y.at(n, k) * proj) * inv);
    }
  });
}

/// out[i] = x[indices[i]] along axis 0.
template <class T>
Var gather_rows(Graph<T>& g, Var x, std::span<const std::size_t> indices) {
  const Tensor<T>& X = g.value(x);
  const std::size_t rows = X.dim(0), stride = X.size() / rows;
  Shape shape = X.shape();
  shape[0] = indices.size();
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    detail::require(indices[i] < rows, "gather_rows: index " + std::to_string(indices[i]) +
                                           " out of range for " + std::to_string(rows) + " rows");
    std::copy(X.data() + indices[i] * stride, X.data() + (indices[i] + 1) * stride,
              out.data() + i * stride);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Var self{g.size()};
  return g.record(std::move(out), {x}, [=](Graph<T>& gr) {
    const Tensor<T>& dY = gr.grad(self);
    Tensor<T>& dX = gr.grad_buffer(x);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t k = 0; k < stride; ++k) dX[idx[i] * stride + k] += dY[i * stride + k];
  });
}

template <class T>
Var sum(Graph<T>& g, Var x) {
  const Tensor<T>& X = g.value(x);
  double s = 0;
  for (T v : X.values()) s += v;
  Var self{g.size()};
  return g.record(Tensor<T>(Shape{1}, static_cast<T>(s)), {x}, [=](Graph<T>& gr) {
    const T d = gr.grad(self)[0];
    Tensor<T>& dX = gr.grad_buffer(x);
    for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += d;
  });
}

/// Scalar sum(x * weights) with a constant weight tensor; the usual probe for
/// gradient checks of non-scalar ops.
template <class T>
Var weighted_sum(Graph<T>& g, Var x, const Tensor<T>& weights) {
  const Tensor<T>& X = g.value(x);
  detail::require(X.shape() == weights.shape(), "weighted_sum: shape mismatch " +
                                                    shape_str(X.shape()) + " vs " +
                                                    shape_str(weights.shape()));
  double s = 0;
  for (std::size_t i = 0; i < X.size(); ++i) s += static_cast<double>(X[i]) * weights[i];
  Var self{g.size()};
  return g.record(Tensor<T>(Shape{1}, static_cast<T>(s)), {x}, [=](Graph<T>& gr) {
    const T d = gr.grad(self)[0];
    Tensor<T>& dX = gr.grad_buffer(x);
    for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += d * weights[i];
  });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& Bv = g.value(b);
  detail::require(A.shape() == Bv.shape(), "mul: shape mismatch " + shape_str(A.shape()) +
                                               " vs " + shape_str(Bv.shape()));
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * Bv[i];
  Var self{g.size()};
  return g.record(std::move(out), {a, b}, [=](Graph<T>& gr) {
    const Tensor<T>& dY = gr.grad(self);
    if (gr.requires_grad(a)) {
      Tensor<T>& dA = gr.grad_buffer(a);
      const Tensor<T>& Bw = gr.value(b);
      for (std::size_t i = 0; i < dY.size(); ++i) dA[i] += dY[i] * Bw[i];
    }
    if (gr.requires_grad(b)) {
      Tensor<T>& dB = gr.grad_buffer(b);
      const Tensor<T>& Aw = gr.value(a);
      for (std::size_t i = 0; i < dY.size(); ++i) dB[i] += dY[i] * Aw[i];
    }
  });
}

template <class T>
Var scale(Graph<T>& g, Var x, T factor) {
  const Tensor<T>& X = g.value(x);
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] * factor;
  Var self{g.size()};
  return g.record(std::move(out), {x}, [=](Graph<T>& gr) {
    const Tensor<T>& dY = gr.grad(self);
    Tensor<T>& dX = gr.grad_buffer(x);
    for (std::size_t i = 0; i < dY.size(); ++i) dX[i] += dY[i] * factor;
  });
}

}  // namespace nn
}  // namespace specklenn
