#pragma once

// Central finite-difference oracle. It evaluates the objective through fresh
// graphs only, never through backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mtta/array.hpp"
#include "mtta/graph.hpp"

namespace mtta::fd {

using Builder = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

inline double evaluate(const std::vector<Array>& inputs, const Builder& build) {
  ad::Graph g;
  std::vector<ad::Var> vars;
  for (const auto& a : inputs) vars.push_back(g.input(a));
  return build(g, vars).value().item();
}

inline std::vector<Array> analytic_gradients(const std::vector<Array>& inputs, const Builder& build) {
  ad::Graph g;
  std::vector<ad::Var> vars;
  for (const auto& a : inputs) vars.push_back(g.input(a));
  g.backward(build(g, vars));
  std::vector<Array> out;
  for (auto v : vars) out.push_back(g.grad(v));
  return out;
}

// max over entries of |analytic - fd| / max(1, |fd|), h = 1e-5 * max(1, |x|)
// (retried at h/100 when the first estimate misses)
inline double max_fd_error(const std::vector<Array>& inputs, const Builder& build) {
  const auto grads = analytic_gradients(inputs, build);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k][i];
      auto fd_error = [&](double h) {
        std::vector<Array> plus = inputs, minus = inputs;
        plus[k].at(i) = x + h;
        minus[k].at(i) = x - h;
        const double fd = (evaluate(plus, build) - evaluate(minus, build)) / (2.0 * h);
        return std::fabs(grads[k][i] - fd) / std::max(1.0, std::fabs(fd));
      };
      const double h = 1e-5 * std::max(1.0, std::fabs(x));
      double err = fd_error(h);
      // A ReLU kink inside [x-h, x+h] spoils the central difference; a much
      // smaller step almost never straddles the same kink.
      if (err >= 1e-4) err = std::min(err, fd_error(h * 1e-2));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline Array random_array(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Array(std::move(shape), std::move(v));
}

// Keeps entries at least `gap` away from zero so kinked ops stay differentiable under FD.
inline Array away_from_zero(std::mt19937_64& rng, Shape shape, double gap = 0.05) {
  Array a = random_array(rng, std::move(shape));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::fabs(a[i]) < gap) a.at(i) = a[i] < 0 ? -gap - 0.1 : gap + 0.1;
  }
  return a;
}

}  // namespace mtta::fd
