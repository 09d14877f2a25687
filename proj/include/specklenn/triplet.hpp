#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "specklenn/autodiff.hpp"
#include "specklenn/rng.hpp"

namespace specklenn {

enum class Difficulty { easy, semi_hard, hard };

inline const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::semi_hard: return "semi_hard";
    case Difficulty::hard: return "hard";
  }
  return "?";
}

/// hard: d_an <= d_ap; semi-hard: d_ap < d_an < d_ap + alpha; easy otherwise.
inline Difficulty classify_triplet_difficulty(double d2_ap, double d2_an, double alpha) {
  if (d2_an <= d2_ap) return Difficulty::hard;
  if (d2_an < d2_ap + alpha) return Difficulty::semi_hard;
  return Difficulty::easy;
}

/// Squared distances on the unit sphere never exceed 4, so neither can the margin.
inline void validate_margin(double alpha) {
  if (!(alpha > 0.0 && alpha <= 4.0)) {
    throw std::invalid_argument("triplet margin alpha must lie in (0, 4], got " + std::to_string(alpha));
  }
}

template <class T>
double squared_distance(const T* a, const T* b, std::size_t n) {
  double s = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    s += d * d;
  }
  return s;
}

/// Indices into a mini-batch. Anchor and positive share class and sample.
struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  int label = 0;
  int sample = 0;
  int negative_label = 0;
  int negative_sample = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct TripletLoss {
  Var loss;
  std::size_t count = 0;
  std::size_t active = 0;  // triplets with a positive hinge
  bool empty = false;      // no triplets were supplied; loss is a constant 0
};

/// Sum over triplets of [alpha + |a-p|^2 - |a-n|^2]_+ for row-aligned
/// [N,d] anchors, positives and negatives.
template <class T>
TripletLoss triplet_loss(Graph<T>& g, Var anchors, Var positives, Var negatives, double alpha) {
  validate_margin(alpha);
  const Tensor<T>& A = g.value(anchors);
  const Tensor<T>& P = g.value(positives);
  const Tensor<T>& N = g.value(negatives);
  nn::detail::require(A.rank() == 2 && A.shape() == P.shape() && A.shape() == N.shape(),
                      "triplet_loss: anchors/positives/negatives must share an [N,d] shape, got " +
                          shape_str(A.shape()) + ", " + shape_str(P.shape()) + ", " + shape_str(N.shape()));
  const std::size_t rows = A.dim(0), D = A.dim(1);
  TripletLoss out;
  out.count = rows;
  if (rows == 0) {
    out.empty = true;
    out.loss = g.input(Tensor<T>(Shape{1}));
    return out;
  }
  auto active = std::make_shared<std::vector<unsigned char>>(rows, 0);
  std::vector<double> hinge(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double dap = squared_distance(A.data() + i * D, P.data() + i * D, D);
    const double dan = squared_distance(A.data() + i * D, N.data() + i * D, D);
    hinge[i] = alpha + dap - dan;
    (*active)[i] = hinge[i] > 0;
  }
  if (PiecewiseTape* tape = g.piecewise_tape()) tape->apply(*active);
  double total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!(*active)[i]) continue;
    total += hinge[i];
    ++out.active;
  }
  Var self{g.size()};
  out.loss = g.record(Tensor<T>(Shape{1}, static_cast<T>(total)), {anchors, positives, negatives},
                      [=](Graph<T>& gr) {
                        const double up = gr.grad(self)[0];
                        const Tensor<T>& Av = gr.value(anchors);
                        const Tensor<T>& Pv = gr.value(positives);
                        const Tensor<T>& Nv = gr.value(negatives);
                        const bool ga = gr.requires_grad(anchors), gp = gr.requires_grad(positives),
                                   gn = gr.requires_grad(negatives);
                        for (std::size_t i = 0; i < rows; ++i) {
                          if (!(*active)[i]) continue;
                          for (std::size_t k = 0; k < D; ++k) {
                            const std::size_t j = i * D + k;
                            const double a = Av[j], p = Pv[j], n = Nv[j];
                            if (ga) gr.grad_buffer(anchors)[j] += static_cast<T>(up * 2 * (n - p));
                            if (gp) gr.grad_buffer(positives)[j] += static_cast<T>(up * -2 * (a - p));
                            if (gn) gr.grad_buffer(negatives)[j] += static_cast<T>(up * 2 * (a - n));
                          }
                        }
                      });
  return out;
}

/// Triplet loss over rows of a batch embedding matrix.
template <class T>
TripletLoss triplet_loss(Graph<T>& g, Var embeddings, std::span<const Triplet> triplets, double alpha) {
  std::vector<std::size_t> ia, ip, in;
  for (const Triplet& t : triplets) {
    ia.push_back(t.anchor);
    ip.push_back(t.positive);
    in.push_back(t.negative);
  }
  return triplet_loss(g, nn::gather_rows<T>(g, embeddings, ia), nn::gather_rows<T>(g, embeddings, ip),
                      nn::gather_rows<T>(g, embeddings, in), alpha);
}

enum class MiningDiagnostic {
  ok,
  no_positive_pairs,  // no two items share both class and sample
  no_negatives,       // the batch holds a single class
  no_semi_hard,       // pairs exist but every candidate is easy or hard
};

inline const char* to_string(MiningDiagnostic d) {
  switch (d) {
    case MiningDiagnostic::ok: return "ok";
    case MiningDiagnostic::no_positive_pairs: return "no_positive_pairs";
    case MiningDiagnostic::no_negatives: return "no_negatives";
    case MiningDiagnostic::no_semi_hard: return "no_semi_hard";
  }
  return "?";
}

struct DifficultyCounts {
  std::size_t easy = 0;
  std::size_t semi_hard = 0;
  std::size_t hard = 0;

  std::size_t total() const { return easy + semi_hard + hard; }
  DifficultyCounts& operator+=(const DifficultyCounts& o) {
    easy += o.easy;
    semi_hard += o.semi_hard;
    hard += o.hard;
    return *this;
  }
  friend bool operator==(const DifficultyCounts&, const DifficultyCounts&) = default;
};

struct MiningResult {
  std::vector<Triplet> triplets;
  std::size_t positive_pairs = 0;
  DifficultyCounts candidates;  // every valid (a,p,n) in the batch, by difficulty
  MiningDiagnostic diagnostic = MiningDiagnostic::ok;
};

inline constexpr std::size_t kAllTriplets = std::numeric_limits<std::size_t>::max();

/// Semi-hard triplets of a batch: anchor and positive from the same sample and
/// class, negative of any other class from any sample. When more than `want`
/// qualify, `want` of them are drawn uniformly without replacement.
template <class T>
MiningResult mine_semi_hard(const Tensor<T>& embeddings, std::span<const int> labels,
                            std::span<const int> samples, double alpha, Rng& rng,
                            std::size_t want = kAllTriplets) {
  validate_margin(alpha);
  nn::detail::require(embeddings.rank() == 2, "mine_semi_hard: embeddings must be [B,d], got " +
                                                  shape_str(embeddings.shape()));
  const std::size_t B = embeddings.dim(0), D = embeddings.dim(1);
  nn::detail::require(labels.size() == B && samples.size() == B,
                      "mine_semi_hard: need one label and one sample id per embedding");
  MiningResult r;
  if (B == 0) {
    r.diagnostic = MiningDiagnostic::no_positive_pairs;
    return r;
  }
  std::vector<double> d2(B * B, 0.0);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = i + 1; j < B; ++j)
      d2[i * B + j] = d2[j * B + i] =
          squared_distance(embeddings.data() + i * D, embeddings.data() + j * D, D);

  bool any_negative = false;
  for (std::size_t a = 0; a < B; ++a) {
    for (std::size_t p = 0; p < B; ++p) {
      if (p == a || labels[p] != labels[a] || samples[p] != samples[a]) continue;
      ++r.positive_pairs;
      for (std::size_t n = 0; n < B; ++n) {
        if (labels[n] == labels[a]) continue;
        any_negative = true;
        switch (classify_triplet_difficulty(d2[a * B + p], d2[a * B + n], alpha)) {
          case Difficulty::easy: ++r.candidates.easy; break;
          case Difficulty::hard: ++r.candidates.hard; break;
          case Difficulty::semi_hard:
            ++r.candidates.semi_hard;
            r.triplets.push_back({a, p, n, labels[a], samples[a], labels[n], samples[n]});
            break;
        }
      }
    }
  }
  if (r.positive_pairs == 0) {
    r.diagnostic = MiningDiagnostic::no_positive_pairs;
  } else if (!any_negative) {
    r.diagnostic = MiningDiagnostic::no_negatives;
  } else if (r.triplets.empty()) {
    r.diagnostic = MiningDiagnostic::no_semi_hard;
  }
  if (r.triplets.size() > want) {
    for (std::size_t i = 0; i < want; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, r.triplets.size() - 1);
      std::swap(r.triplets[i], r.triplets[pick(rng)]);
    }
    r.triplets.resize(want);
  }
  return r;
}

}  // namespace specklenn
