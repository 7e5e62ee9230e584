// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "blora/flow.hpp"
#include "blora/params.hpp"
#include "blora/posterior.hpp"
#include "blora/rng.hpp"
#include "testutil.hpp"

using namespace blora;
using testutil::allclose;

namespace {

// Random flow parameters with modest magnitudes (scales stay well-behaved).
void randomize_flow(const FlowStack& flow, ParamStore& store, const std::string& prefix,
                    RandomStream& rng, double scale = 0.3) {
  flow.init_params(store, prefix, rng);
  for (int l = 0; l < flow.depth(); ++l) {
    store.at(FlowStack::param_name(prefix, l, "w2s")) =
        scale * Matrix::randn(flow.dim(), 2 * flow.dim(), rng);
    store.at(FlowStack::param_name(prefix, l, "b2s")) =
        scale * Matrix::randn(flow.dim(), 1, rng);
    store.at(FlowStack::param_name(prefix, l, "w2t")) =
        scale * Matrix::randn(flow.dim(), 2 * flow.dim(), rng);
    store.at(FlowStack::param_name(prefix, l, "b2t")) =
        scale * Matrix::randn(flow.dim(), 1, rng);
  }
}

}  // namespace

TEST_CASE("depth zero is the identity with zero log-determinant") {
  FlowStack flow(6, 0);
  ParamStore store;
  RandomStream rng(2);
  Matrix u0 = Matrix::randn(2, 3, rng);
  const auto [y, logdet] = flow.forward_with_logdet(store, "f.", u0);
  CHECK(allclose(y, u0, 0.0));
  CHECK(logdet == 0.0);
}

TEST_CASE("frozen unit log-scale gives logdet d and scales by e") {
  FlowStack flow(4, 1);
  ParamStore store;
  RandomStream rng(3);
  flow.init_params(store, "f.", rng);
  store.at("f.0.b2s") = Matrix::constant(4, 1, 1.0);
  Matrix u0 = Matrix::randn(4, 1, rng);
  const auto [y, logdet] = flow.forward_with_logdet(store, "f.", u0);
  CHECK(logdet == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(allclose(y, std::exp(1.0) * u0, 1e-12));
}

TEST_CASE("logdet matches a finite-difference Jacobian oracle at d = 3") {
  const int d = 3;
  FlowStack flow(d, 1);
  ParamStore store;
  RandomStream rng(5);
  randomize_flow(flow, store, "f.", rng);
  Matrix u0 = Matrix::randn(d, 1, rng);

  const auto [y, logdet] = flow.forward_with_logdet(store, "f.", u0);
  (void)y;

  const double h = 1e-6;
  Matrix jac(d, d);
  for (int j = 0; j < d; ++j) {
    Matrix up = u0, dn = u0;
    up(j, 0) += h;
    dn(j, 0) -= h;
    const Matrix fp = flow.forward_with_logdet(store, "f.", up).first;
    const Matrix fm = flow.forward_with_logdet(store, "f.", dn).first;
    for (int i = 0; i < d; ++i) jac(i, j) = (fp(i, 0) - fm(i, 0)) / (2.0 * h);
  }
  // Autoregressive structure: lower-triangular with positive diagonal.
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) CHECK(std::fabs(jac(i, j)) < 1e-8);
  double fd_logdet = 0.0;
  for (int i = 0; i < d; ++i) fd_logdet += std::log(jac(i, i));
  CHECK(testutil::rel_err(logdet, fd_logdet) < 1e-4);
}

TEST_CASE("density under the empty flow is the base density") {
  FlowStack flow(3, 0);
  ParamStore store;
  RandomStream rng(7);
  Matrix u = Matrix::randn(3, 1, rng);
  CHECK(flow.density_under_flow(store, "f.", standard_normal_logdensity, u) ==
        standard_normal_logdensity(u));
}

TEST_CASE("density of an affine pushforward matches the hand computation") {
  // u -> 2u + 1 with standard-normal base; at u = 1 the inverse is 0.
  FlowStack flow(1, 1);
  ParamStore store;
  RandomStream rng(9);
  flow.init_params(store, "f.", rng);
  store.at("f.0.b2s") = Matrix::constant(1, 1, std::log(2.0));
  store.at("f.0.b2t") = Matrix::constant(1, 1, 1.0);
  const double got =
      flow.density_under_flow(store, "f.", standard_normal_logdensity, Matrix::constant(1, 1, 1.0));
  const double expect = standard_normal_logdensity(Matrix::zeros(1, 1)) - std::log(2.0);
  CHECK(got == doctest::Approx(expect).epsilon(1e-14));
  CHECK(got == doctest::Approx(-1.6120857137646181).epsilon(1e-12));
}

TEST_CASE("density at a forward image is the base density minus logdet") {
  RandomStream rng(11);
  for (int depth : {1, 2}) {
    FlowStack flow(6, depth);
    ParamStore store;
    randomize_flow(flow, store, "f.", rng);
    for (int trial = 0; trial < 5; ++trial) {
      Matrix u0 = Matrix::randn(6, 1, rng);
      const auto [y, logdet] = flow.forward_with_logdet(store, "f.", u0);
      const double lhs =
          flow.density_under_flow(store, "f.", standard_normal_logdensity, y.reshaped(6, 1));
      const double rhs = standard_normal_logdensity(u0) - logdet;
      CHECK(std::fabs(lhs - rhs) < 1e-10);
    }
  }
}

TEST_CASE("forward then inverse round-trips within 1e-8 up to depth 4 and d = 81") {
  RandomStream rng(13);
  for (int depth : {0, 1, 2, 4}) {
    for (int d : {1, 2, 9, 81}) {
      FlowStack flow(d, depth);
      ParamStore store;
      randomize_flow(flow, store, "f.", rng, 0.2);
      Matrix u0 = Matrix::randn(d, 1, rng);
      const auto [y, logdet] = flow.forward_with_logdet(store, "f.", u0);
      (void)logdet;
      const Matrix back = flow.inverse(store, "f.", y.reshaped(d, 1));
      CHECK(max_abs_diff(back, u0) < 1e-8);
    }
  }
}

TEST_CASE("one-dimensional flow density integrates to one") {
  RandomStream rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    FlowStack flow(1, 1);
    ParamStore store;
    flow.init_params(store, "f.", rng);
    store.at("f.0.b2s") = Matrix::constant(1, 1, -0.5 + rng.uniform());
    store.at("f.0.b2t") = Matrix::constant(1, 1, -1.0 + 2.0 * rng.uniform());

    // Simpson's rule over [-10, 10].
    const int n = 4000;
    const double a = -10.0, b = 10.0;
    const double h = (b - a) / n;
    double integral = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double x = a + h * i;
      const double f = std::exp(
          flow.density_under_flow(store, "f.", standard_normal_logdensity, Matrix::constant(1, 1, x)));
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      integral += w * f;
    }
    integral *= h / 3.0;
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("tape forward agrees with the value path and passes gradient checks") {
  const int d = 4;
  FlowStack flow(d, 2);
  ParamStore store;
  RandomStream rng(19);
  randomize_flow(flow, store, "f.", rng);
  Matrix u0 = Matrix::randn(d, 1, rng);

  ad::Tape t;
  for (const auto& name : store.names()) t.param(name, store.at(name));
  ad::Var u = t.input(u0);
  const auto [y, logdet] = flow.forward_on_tape(t, "f.", u);
  const auto [yv, ldv] = flow.forward_with_logdet(store, "f.", u0);
  CHECK(allclose(t.value(y), yv.reshaped(d, 1), 1e-12));
  CHECK(t.value(logdet).at(0) == doctest::Approx(ldv).epsilon(1e-12));

  std::map<std::string, Matrix> params;
  for (const auto& name : store.names()) params.emplace(name, store.at(name));
  auto build = [&flow, u0](ad::Tape& tape, std::map<std::string, ad::Var>&) {
    ad::Var uin = tape.input(u0);
    auto [yy, ld] = flow.forward_on_tape(tape, "f.", uin);
    // Depend on both outputs so every parameter is exercised.
    return tape.add(ld, tape.sum(tape.mul(yy, yy)));
  };
  CHECK(testutil::fd_gradient_max_rel_err(build, params) < 1e-4);
}

TEST_CASE("matrix-shaped input flattens row-major and reshapes back") {
  FlowStack flow(6, 1);
  ParamStore store;
  RandomStream rng(23);
  randomize_flow(flow, store, "f.", rng);
  Matrix u0 = Matrix::randn(2, 3, rng);
  const auto [y_mat, ld_mat] = flow.forward_with_logdet(store, "f.", u0);
  const auto [y_vec, ld_vec] = flow.forward_with_logdet(store, "f.", u0.reshaped(6, 1));
  CHECK(ld_mat == ld_vec);
  CHECK(allclose(y_mat.reshaped(6, 1), y_vec, 0.0));
  CHECK(y_mat.rows() == 2);
  CHECK(y_mat.cols() == 3);
}
