#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "specklenn/autodiff.hpp"

namespace specklenn::testing {

struct GradCheckReport {
  double max_coord_error = 0;  // max over coordinates of |a-n| / max(|a|,|n|,floor)
  double norm_error = 0;       // ||a-n|| / max(||a||,||n||) over sampled coordinates
  std::size_t coords = 0;
};

// Central-difference check of d loss / d inputs. `build` turns bound input
// vars into a scalar loss; the inputs are rebuilt from `xs` for each probe.
template <class T>
GradCheckReport gradcheck(std::vector<Tensor<T>> xs,
                          const std::function<Var(Graph<T>&, const std::vector<Var>&)>& build,
                          double h, std::size_t max_coords, std::uint64_t seed = 1,
                          double floor = 1e-6) {
  auto eval = [&](bool with_grad, std::vector<Tensor<T>>* grads) {
    Graph<T> g;
    std::vector<Var> vs;
    for (auto& x : xs) vs.push_back(g.input(x, with_grad));
    Var loss = build(g, vs);
    const double v = g.value(loss)[0];
    if (with_grad) {
      g.backward(loss);
      for (std::size_t k = 0; k < vs.size(); ++k)
        grads->push_back(g.has_grad(vs[k]) ? g.grad(vs[k]) : Tensor<T>(xs[k].shape()));
    }
    return v;
  };
  std::vector<Tensor<T>> analytic;
  eval(true, &analytic);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t k = 0; k < xs.size(); ++k)
    for (std::size_t i = 0; i < xs[k].size(); ++i) coords.emplace_back(k, i);
  std::mt19937_64 rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  if (coords.size() > max_coords) coords.resize(max_coords);

  GradCheckReport r;
  double diff2 = 0, a2 = 0, n2 = 0;
  for (auto [k, i] : coords) {
    const T saved = xs[k][i];
    xs[k][i] = static_cast<T>(saved + h);
    const double up = eval(false, nullptr);
    xs[k][i] = static_cast<T>(saved - h);
    const double down = eval(false, nullptr);
    xs[k][i] = saved;
    const double n = (up - down) / (2 * h);
    const double a = analytic[k][i];
    const double e = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
    r.max_coord_error = std::max(r.max_coord_error, e);
    diff2 += (a - n) * (a - n);
    a2 += a * a;
    n2 += n * n;
  }
  r.coords = coords.size();
  r.norm_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
  return r;
}

// Values k/4 with small integer k: sums and products stay exact in float.
template <class T>
Tensor<T> dyadic_tensor(Shape shape, std::mt19937_64& rng, int range = 8) {
  Tensor<T> t(std::move(shape));
  std::uniform_int_distribution<int> d(-range, range);
  for (auto& v : t.values()) v = static_cast<T>(d(rng) / 4.0);
  return t;
}

template <class T>
Tensor<T> uniform_tensor(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(d(rng));
  return t;
}

// Uniform values with |x| >= gap, keeping ReLU kinks out of reach of a probe.
template <class T>
Tensor<T> away_from_zero(Shape shape, std::mt19937_64& rng, double gap = 0.05) {
  Tensor<T> t = uniform_tensor<T>(std::move(shape), rng);
  for (auto& v : t.values()) v = static_cast<T>(v >= 0 ? v + gap : v - gap);
  return t;
}

}  // namespace specklenn::testing
