#pragma once

#include <cmath>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include "specklenn/triplet.hpp"

namespace specklenn::testing {

inline Tensor<float> unit_rows(std::size_t B, std::size_t D, Rng& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensor<float> t(Shape{B, D});
  for (std::size_t i = 0; i < B; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < D; ++k) {
      t[i * D + k] = n(rng);
      s += static_cast<double>(t[i * D + k]) * t[i * D + k];
    }
    for (std::size_t k = 0; k < D; ++k) t[i * D + k] = static_cast<float>(t[i * D + k] / std::sqrt(s));
  }
  return t;
}

using Key = std::tuple<std::size_t, std::size_t, std::size_t>;

struct Oracle {
  std::set<Key> semi_hard;
  DifficultyCounts counts;
  std::size_t pairs = 0;
};

// Brute force over every ordered (a, p, n) with the difficulty rules written out directly.
inline Oracle brute_force(const Tensor<float>& e, const std::vector<int>& labels, const std::vector<int>& samples,
                   double alpha) {
  const std::size_t B = e.dim(0), D = e.dim(1);
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < D; ++k) s += std::pow(double(e[i * D + k]) - double(e[j * D + k]), 2);
    return s;
  };
  Oracle o;
  for (std::size_t a = 0; a < B; ++a)
    for (std::size_t p = 0; p < B; ++p) {
      if (a == p || labels[a] != labels[p] || samples[a] != samples[p]) continue;
      ++o.pairs;
      for (std::size_t n = 0; n < B; ++n) {
        if (labels[n] == labels[a]) continue;
        const double ap = dist(a, p), an = dist(a, n);
        if (an <= ap) {
          ++o.counts.hard;
        } else if (an >= ap + alpha) {
          ++o.counts.easy;
        } else {
          ++o.counts.semi_hard;
          o.semi_hard.insert({a, p, n});
        }
      }
    }
  return o;
}

}  // namespace specklenn::testing
