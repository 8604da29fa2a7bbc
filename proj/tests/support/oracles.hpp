#pragma once

// Test-only oracles. Nothing here calls into the code paths it checks
// except through the public forward functions being differentiated.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "star/autodiff.hpp"
#include "star/rng.hpp"
#include "star/tensor.hpp"

namespace star::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor loop_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
      out[i * n + j] = s;
    }
  return Tensor({m, n}, std::move(out));
}

inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Builds a scalar loss from leaves bound on a fresh tape.
using LossBuilder = std::function<Var(Tape&, std::span<const Var>)>;

struct FdReport {
  double max_rel = 0.0;
  double max_abs = 0.0;
};

// Central finite differences on every entry of every input.
inline FdReport finite_difference_check(const LossBuilder& build, const std::vector<Tensor>& inputs,
                                        double h = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, true));
    Var loss = build(tape, leaves);
    tape.backward(loss);
    for (Var v : leaves) analytic.push_back(tape.grad(v));
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape tape(false);
    std::vector<Var> leaves;
    for (const Tensor& t : xs) leaves.push_back(tape.leaf(t, false));
    return build(tape, leaves).value().item();
  };
  FdReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].numel(); ++i) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      auto vp = inputs[t].to_vector();
      auto vm = vp;
      vp[i] += h;
      vm[i] -= h;
      plus[t] = Tensor(inputs[t].shape(), std::move(vp));
      minus[t] = Tensor(inputs[t].shape(), std::move(vm));
      const double numeric = (eval(plus) - eval(minus)) / (2.0 * h);
      const double a = analytic[t][i];
      report.max_rel = std::max(report.max_rel, rel_err(a, numeric));
      report.max_abs = std::max(report.max_abs, std::abs(a - numeric));
    }
  }
  return report;
}

// Random loss weights turn any tensor-valued output into a scalar whose
// gradient reaches every output entry.
inline Var weighted_sum(Tape& tape, Var out, std::uint64_t seed) {
  Rng rng(seed, 99);
  Var w = tape.constant(random_tensor(out.shape(), rng));
  return sum(mul(out, w));
}

}  // namespace star::testing
