#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "specklenn/autodiff.hpp"
#include "support/gradcheck.hpp"

namespace specklenn::testing {

/// One gradient probe per layer op: random inputs and a scalar loss built from them.
template <class T>
struct OpGradCase {
  const char* name;
  std::vector<Tensor<T>> inputs;
  std::function<Var(Graph<T>&, const std::vector<Var>&)> build;
};

template <class T>
std::vector<OpGradCase<T>> op_cases() {
  std::mt19937_64 rng(21);
  std::vector<OpGradCase<T>> cases;
  auto probe = [](Shape s, std::uint64_t seed) {
    std::mt19937_64 r(seed);
    return uniform_tensor<T>(std::move(s), r);
  };
  {
    auto w = probe({2, 3, 4, 4}, 1);
    cases.push_back({"conv2d",
                     {uniform_tensor<T>({2, 2, 8, 8}, rng), uniform_tensor<T>({3, 2, 5, 5}, rng),
                      uniform_tensor<T>({3}, rng)},
                     [w](Graph<T>& g, const std::vector<Var>& v) {
                       return nn::weighted_sum(g, nn::conv2d(g, v[0], v[1], v[2]), w);
                     }});
  }
  {
    auto w = probe({3, 5}, 2);
    cases.push_back({"relu", {away_from_zero<T>({3, 5}, rng)},
                     [w](Graph<T>& g, const std::vector<Var>& v) { return nn::weighted_sum(g, nn::relu(g, v[0]), w); }});
  }
  for (Mode mode : {Mode::train, Mode::eval}) {
    auto w = probe({3, 2, 3, 3}, 3);
    auto state = std::make_shared<BatchNormState<T>>(2);
    state->running_mean = probe({2}, 4);
    state->running_var = Tensor<T>(Shape{2}, {T(0.7), T(1.9)});
    cases.push_back({mode == Mode::train ? "batchnorm2d/train" : "batchnorm2d/eval",
                     {uniform_tensor<T>({3, 2, 3, 3}, rng, -2, 2), uniform_tensor<T>({2}, rng, 0.5, 1.5),
                      uniform_tensor<T>({2}, rng)},
                     [w, state, mode](Graph<T>& g, const std::vector<Var>& v) {
                       BatchNormState<T> s = *state;
                       return nn::weighted_sum(g, nn::batchnorm2d(g, v[0], v[1], v[2], s, mode), w);
                     }});
  }
  {
    // Distinct values a permutation apart keep every window's argmax stable.
    Tensor<T> x(Shape{2, 2, 5, 6});
    std::vector<int> perm(x.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(perm[i] * 0.05);
    auto w = probe({2, 2, 2, 3}, 5);
    cases.push_back({"maxpool2d", {x}, [w](Graph<T>& g, const std::vector<Var>& v) {
                       return nn::weighted_sum(g, nn::maxpool2d(g, v[0]), w);
                     }});
  }
  for (Mode mode : {Mode::train, Mode::eval}) {
    auto w = probe({4, 3}, 6);
    cases.push_back({"linear",
                     {uniform_tensor<T>({4, 5}, rng), uniform_tensor<T>({3, 5}, rng),
                      uniform_tensor<T>({3}, rng)},
                     [w, mode](Graph<T>& g, const std::vector<Var>& v) {
                       return nn::weighted_sum(g, nn::linear(g, v[0], v[1], v[2], mode), w);
                     }});
  }
  {
    auto w = probe({3, 6}, 7);
    cases.push_back({"l2_normalize", {uniform_tensor<T>({3, 6}, rng)},
                     [w](Graph<T>& g, const std::vector<Var>& v) {
                       return nn::weighted_sum(g, nn::l2_normalize(g, v[0]), w);
                     }});
  }
  {
    std::vector<std::size_t> idx{2, 0, 2, 1};
    auto w = probe({4, 3}, 8);
    cases.push_back({"gather_rows", {uniform_tensor<T>({3, 3}, rng)},
                     [w, idx](Graph<T>& g, const std::vector<Var>& v) {
                       return nn::weighted_sum(g, nn::gather_rows<T>(g, v[0], idx), w);
                     }});
  }
  {
    auto w = probe({2, 2, 3, 3}, 9);
    cases.push_back({"flatten+mul+scale",
                     {uniform_tensor<T>({2, 18}, rng), uniform_tensor<T>({2, 18}, rng)},
                     [w](Graph<T>& g, const std::vector<Var>& v) {
                       Var m = nn::scale(g, nn::mul(g, v[0], v[1]), T(1.5));
                       return nn::sum(g, nn::mul(g, m, nn::flatten(g, g.constant(w))));
                     }});
  }
  return cases;
}

}  // namespace specklenn::testing
