// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "blora/matrix.hpp"
#include "blora/rng.hpp"
#include "blora/tape.hpp"

namespace blora::testutil {

inline bool close(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

inline bool allclose(const Matrix& a, const Matrix& b, double tol) {
  if (!a.same_shape(b)) return false;
  return max_abs_diff(a, b) <= tol;
}

inline double rel_err(double got, double want) {
  return std::fabs(got - want) / std::max({std::fabs(got), std::fabs(want), 1e-6});
}

// Builds the scalar output from named parameters on a fresh tape.
using ScalarBuilder =
    std::function<ad::Var(ad::Tape&, std::map<std::string, ad::Var>&)>;

// Central finite-difference check of reverse-mode gradients for every entry
// of every parameter. Returns the worst relative error seen.
inline double fd_gradient_max_rel_err(const ScalarBuilder& build,
                                      const std::map<std::string, Matrix>& params,
                                      double step = 1e-5) {
  auto eval = [&](const std::map<std::string, Matrix>& p) {
    ad::Tape t;
    std::map<std::string, ad::Var> vars;
    for (const auto& [name, value] : p) vars.emplace(name, t.param(name, value));
    ad::Var out = build(t, vars);
    return t.value(out).at(0);
  };

  ad::Tape t;
  std::map<std::string, ad::Var> vars;
  for (const auto& [name, value] : params) vars.emplace(name, t.param(name, value));
  ad::Var out = build(t, vars);
  auto grads = t.gradients(out);

  double worst = 0.0;
  for (const auto& [name, value] : params) {
    for (std::size_t i = 0; i < value.size(); ++i) {
      auto plus = params;
      auto minus = params;
      plus.at(name).at(i) += step;
      minus.at(name).at(i) -= step;
      const double fd = (eval(plus) - eval(minus)) / (2.0 * step);
      worst = std::max(worst, rel_err(grads.at(name).at(i), fd));
    }
  }
  return worst;
}

// Symmetric positive-definite test matrix a a^T + ridge I.
inline Matrix random_spd(int n, RandomStream& rng, double ridge = 0.5) {
  Matrix a = Matrix::randn(n, n, rng);
  Matrix k = matmul(a, transpose(a));
  for (int i = 0; i < n; ++i) k(i, i) += ridge;
  return k;
}

}  // namespace blora::testutil
