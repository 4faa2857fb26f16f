// Brute-force attack oracles on linear models, shared by the unit tests and the
// acceptance binary. None of them calls into the attack code.
#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <vector>

#include "support.hpp"

namespace tsadv::testing {

// Two-class linear model whose class-1 margin is w.x + b.
inline LinearModel margin_model(const std::vector<double>& w, double b) {
  const std::size_t d = w.size();
  Tensor weights({2, d});
  for (std::size_t j = 0; j < d; ++j) weights.at(1, j) = w[j];
  return LinearModel(weights, Tensor::vector({0.0, b}), Shape{d});
}

inline Tensor corner(const Tensor& x, std::size_t mask, double eps) {
  Tensor c = x;
  for (std::size_t j = 0; j < x.size(); ++j) c[j] += (mask >> j & 1) ? eps : -eps;
  return c;
}

// Worst-case cross-entropy over all 2^d sign corners of the epsilon box. For a
// linear model the loss is convex in x, so the maximum over the box is at a corner.
inline double corner_max_loss(const DifferentiableModel& m, const Tensor& x, std::size_t y, double eps) {
  double best = -1.0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << x.size()); ++mask)
    best = std::max(best, cross_entropy(m, corner(x, mask, eps), y));
  return best;
}

// True when no corner is misclassified. For a two-class linear model the margin is
// linear, so this is exact robustness over the whole box.
inline bool corner_robust(const DifferentiableModel& m, const Tensor& x, std::size_t y, double eps) {
  for (std::size_t mask = 0; mask < (std::size_t{1} << x.size()); ++mask)
    if (argmax(m.logits(corner(x, mask, eps)).data()) != y) return false;
  return true;
}

// SIMBA on a 3-input linear softmax model: p(y) is tabulated for all 27
// {-eps, 0, +eps} assignments in closed form, then the greedy choice is replayed in
// the attack's visit order (a seeded shuffle of 0..2). Returns the signs.
inline std::array<int, 3> simba_oracle(const LinearModel& m, const Tensor& x, std::size_t y, double eps,
                                       std::uint64_t seed) {
  std::map<std::array<int, 3>, std::vector<double>> table;
  for (int a = -1; a <= 1; ++a)
    for (int b = -1; b <= 1; ++b)
      for (int c = -1; c <= 1; ++c) {
        const std::array<int, 3> s{a, b, c};
        std::vector<double> z(m.num_classes());
        for (std::size_t k = 0; k < z.size(); ++k) {
          z[k] = m.bias()[k];
          for (std::size_t j = 0; j < 3; ++j) z[k] += m.weights().at(k, j) * (x[j] + s[j] * eps);
        }
        table[s] = plain_softmax(z);
      }

  std::vector<std::size_t> order(3);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng order_rng(seed);
  std::shuffle(order.begin(), order.end(), order_rng);

  std::array<int, 3> state{0, 0, 0};
  double p = table[state][y];
  for (std::size_t j : order) {
    auto plus = state, minus = state;
    plus[j] = 1;
    minus[j] = -1;
    const double pp = table[plus][y], pm = table[minus][y];
    if (pp < p && pp <= pm)
      state = plus;
    else if (pm < p)
      state = minus;
    else
      continue;
    p = table[state][y];
    if (argmax(table[state]) != y) break;
  }
  return state;
}

}  // namespace tsadv::testing
