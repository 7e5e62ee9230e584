// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "blora/bo.hpp"
#include "blora/error.hpp"
#include "blora/matrix.hpp"
#include "blora/rng.hpp"

using namespace blora;

namespace {

GpConfig noise_free() {
  GpConfig cfg;
  cfg.noise_sd = 0.0;
  return cfg;
}

// Evaluates the test landscape: two bowls with swapped optima so the front
// is a genuine trade-off curve.
std::vector<double> bowls(double u, double v) {
  const double f1 = (u - 0.25) * (u - 0.25) + (v - 0.75) * (v - 0.75);
  const double f2 = (u - 0.75) * (u - 0.75) + (v - 0.25) * (v - 0.25);
  return {f1, f2};
}

double front_volume(const ParetoArchive& archive, const std::vector<double>& ref) {
  std::vector<std::vector<double>> pts;
  for (int i : archive.feasible_front()) {
    std::vector<double> g = archive.entries()[i].f;
    for (double& v : g) v = -v;
    pts.push_back(std::move(g));
  }
  return hypervolume(pts, ref).volume;
}

}  // namespace

TEST_CASE("normal cdf hits tabulated values") {
  CHECK(normal_cdf(0.0) == 0.5);
  CHECK(normal_cdf(2.0) == doctest::Approx(0.9772498680518208).epsilon(1e-12));
  CHECK(normal_cdf(-2.0) == doctest::Approx(0.0227501319481792).epsilon(1e-12));
  CHECK(normal_cdf(1.0) + normal_cdf(-1.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("noise-free surrogate interpolates its observations") {
  Matrix x(2, 5);
  const double xs[5][2] = {{0.0, 0.0}, {1.0, 0.2}, {0.1, 1.1}, {1.2, 1.3}, {2.1, 0.7}};
  Matrix y(5, 1);
  for (int i = 0; i < 5; ++i) {
    x(0, i) = xs[i][0];
    x(1, i) = xs[i][1];
    y(i, 0) = std::sin(3.0 * xs[i][0]) + 0.5 * xs[i][1];
  }
  GpSurrogate gp(x, y, noise_free());
  Matrix ell(2, 1);
  ell(0, 0) = 0.7;
  ell(1, 0) = 1.3;
  gp.set_hyperparameters(ell, 1.2);
  auto [mean, cov] = gp.posterior(x);
  for (int i = 0; i < 5; ++i) {
    CHECK(mean(i, 0) == doctest::Approx(y(i, 0)).epsilon(1e-8));
    CHECK(cov(i, i) >= 0.0);
    CHECK(cov(i, i) <= 1e-8);
  }
}

TEST_CASE("single-point posterior matches the closed form") {
  Matrix x = Matrix::zeros(1, 1);
  Matrix y = Matrix::constant(1, 1, 1.0);
  GpSurrogate gp(x, y, noise_free());
  gp.set_hyperparameters(Matrix::constant(1, 1, 1.0), 1.0);

  Matrix q = Matrix::constant(1, 1, 1.0);
  auto [mean, cov] = gp.posterior(q);
  CHECK(mean(0, 0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(cov(0, 0) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-14));

  // Predictive variance adds the observation noise on top of the posterior.
  GpConfig noisy;
  noisy.noise_sd = 0.3;
  GpSurrogate gp2(x, y, noisy);
  gp2.set_hyperparameters(Matrix::constant(1, 1, 1.0), 1.0);
  Matrix var = gp2.predictive_variance(x);
  CHECK(var(0, 0) >= noisy.noise_sd * noisy.noise_sd);
}

TEST_CASE("posterior draws reproduce the analytic moments") {
  Matrix x(1, 3);
  x(0, 0) = 0.0;
  x(0, 1) = 1.0;
  x(0, 2) = 2.5;
  Matrix y(3, 1);
  y(0, 0) = 0.3;
  y(1, 0) = -0.8;
  y(2, 0) = 1.1;
  GpConfig cfg;
  cfg.noise_sd = 0.2;
  GpSurrogate gp(x, y, cfg);
  gp.set_hyperparameters(Matrix::constant(1, 1, 0.9), 1.1);

  Matrix q(1, 2);
  q(0, 0) = 0.5;
  q(0, 1) = 1.8;
  auto [mean, cov] = gp.posterior(q);

  Matrix l(2, 2);
  l(0, 0) = std::sqrt(cov(0, 0));
  l(1, 0) = cov(1, 0) / l(0, 0);
  l(1, 1) = std::sqrt(cov(1, 1) - l(1, 0) * l(1, 0));
  l(0, 1) = 0.0;

  RandomStream rng(20240518);
  const int n = 100000;
  double s0 = 0.0, s1 = 0.0, s00 = 0.0, s11 = 0.0, s01 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z0 = rng.normal(), z1 = rng.normal();
    const double a = mean(0, 0) + l(0, 0) * z0;
    const double b = mean(1, 0) + l(1, 0) * z0 + l(1, 1) * z1;
    s0 += a;
    s1 += b;
    s00 += (a - mean(0, 0)) * (a - mean(0, 0));
    s11 += (b - mean(1, 0)) * (b - mean(1, 0));
    s01 += (a - mean(0, 0)) * (b - mean(1, 0));
  }
  const double se0 = std::sqrt(cov(0, 0) / n);
  const double se1 = std::sqrt(cov(1, 1) / n);
  CHECK(std::fabs(s0 / n - mean(0, 0)) <= 4.0 * se0);
  CHECK(std::fabs(s1 / n - mean(1, 0)) <= 4.0 * se1);
  CHECK(std::fabs(s00 / n - cov(0, 0)) <=
        4.0 * std::sqrt(2.0 * cov(0, 0) * cov(0, 0) / n));
  CHECK(std::fabs(s11 / n - cov(1, 1)) <=
        4.0 * std::sqrt(2.0 * cov(1, 1) * cov(1, 1) / n));
  CHECK(std::fabs(s01 / n - cov(0, 1)) <=
        4.0 * std::sqrt((cov(0, 0) * cov(1, 1) + cov(0, 1) * cov(0, 1)) / n));
}

TEST_CASE("hyperparameter fitting raises the marginal likelihood") {
  RandomStream rng(99);
  const int n = 24;
  Matrix x(2, n);
  Matrix y(n, 1);
  for (int i = 0; i < n; ++i) {
    x(0, i) = rng.uniform();
    x(1, i) = rng.uniform();
    y(i, 0) = std::sin(4.0 * x(0, i)) * std::cos(3.0 * x(1, i)) + 0.05 * rng.normal();
  }
  GpConfig cfg;
  cfg.noise_sd = 0.05;
  cfg.fit_restarts = 3;
  cfg.fit_iters = 80;
  cfg.seed = 5;
  GpSurrogate gp(x, y, cfg);
  const double before = gp.log_marginal();
  gp.fit();
  const double after = gp.log_marginal();
  CHECK(after >= before - 1e-6);
  Matrix ell = gp.lengthscales();
  CHECK(std::isfinite(ell(0, 0)));
  CHECK(std::isfinite(ell(1, 0)));
  CHECK(ell(0, 0) > 0.0);
  CHECK(ell(1, 0) > 0.0);
  CHECK(gp.signal_sd() > 0.0);

  // Identical config and data land on bitwise identical hyperparameters.
  GpSurrogate twin(x, y, cfg);
  twin.fit();
  CHECK(twin.lengthscales()(0, 0) == ell(0, 0));
  CHECK(twin.lengthscales()(1, 0) == ell(1, 0));
  CHECK(twin.signal_sd() == gp.signal_sd());
}

TEST_CASE("surrogate constructor and queries validate shapes") {
  Matrix x(2, 3);
  Matrix y_bad(2, 1);
  CHECK_THROWS_AS(GpSurrogate(x, y_bad), DimensionError);
  Matrix y(3, 1);
  GpSurrogate gp(x, y);
  CHECK_THROWS_AS(gp.set_hyperparameters(Matrix::constant(1, 1, 1.0), 1.0), DimensionError);
  CHECK_THROWS_AS(gp.set_hyperparameters(Matrix::constant(2, 1, -1.0), 1.0), ParameterError);
  CHECK_THROWS_AS(gp.set_hyperparameters(Matrix::constant(2, 1, 1.0), 0.0), ParameterError);
  CHECK_THROWS_AS(gp.posterior(Matrix::zeros(3, 1)), DimensionError);
  GpConfig bad;
  bad.noise_sd = -1.0;
  CHECK_THROWS_AS(GpSurrogate(x, y, bad), ParameterError);
}

TEST_CASE("feasibility probability matches the normal tail") {
  // A query far from the single observation reverts to the prior.
  Matrix x = Matrix::zeros(1, 1);
  Matrix far = Matrix::constant(1, 1, 100.0);

  GpConfig at_zero = noise_free();
  GpSurrogate c0(x, Matrix::zeros(1, 1), at_zero);
  c0.set_hyperparameters(Matrix::constant(1, 1, 1.0), 1.0);
  CHECK(prob_feasible({&c0}, far) == 0.5);
  CHECK(prob_feasible({&c0, &c0}, far) == 0.25);

  GpConfig shifted = noise_free();
  shifted.prior_mean = -2.0;
  GpSurrogate c2(x, Matrix::constant(1, 1, -2.0), shifted);
  c2.set_hyperparameters(Matrix::constant(1, 1, 1.0), 1.0);
  CHECK(prob_feasible({&c2}, far) == doctest::Approx(0.9772498680518208).epsilon(1e-12));

  // At the training input the posterior collapses; the pointwise limit of
  // the tail probability applies.
  GpSurrogate up(x, Matrix::constant(1, 1, 1.0), noise_free());
  up.set_hyperparameters(Matrix::constant(1, 1, 1.0), 1.0);
  CHECK(prob_feasible({&up}, x) == 0.0);
  GpSurrogate down(x, Matrix::constant(1, 1, -1.0), noise_free());
  down.set_hyperparameters(Matrix::constant(1, 1, 1.0), 1.0);
  CHECK(prob_feasible({&down}, x) == 1.0);
  GpSurrogate flat(x, Matrix::zeros(1, 1), noise_free());
  flat.set_hyperparameters(Matrix::constant(1, 1, 1.0), 1.0);
  CHECK(prob_feasible({&flat}, x) == 0.5);

  // No constraints means certainly feasible.
  CHECK(prob_feasible({}, far) == 1.0);
}

TEST_CASE("dominance filter keeps exactly the non-dominated points") {
  std::vector<std::vector<double>> pts = {{1.0, 2.0}, {2.0, 1.0}, {2.0, 2.0}};
  std::vector<int> keep = pareto_filter(pts);
  REQUIRE(keep.size() == 2);
  CHECK(keep[0] == 0);
  CHECK(keep[1] == 1);

  CHECK(pareto_filter({{3.0, 4.0}}).size() == 1);

  // Duplicates never dominate each other.
  std::vector<int> dup = pareto_filter({{1.0, 1.0}, {1.0, 1.0}});
  CHECK(dup.size() == 2);

  // Three objectives.
  std::vector<int> three = pareto_filter({{1, 1, 1}, {2, 2, 2}, {0, 3, 1}});
  REQUIRE(three.size() == 2);
  CHECK(three[0] == 0);
  CHECK(three[1] == 2);
}

TEST_CASE("hypervolume agrees with hand geometry") {
  CHECK(hypervolume({{1.0, 2.0}, {2.0, 1.0}}, {0.0, 0.0}).volume == 3.0);
  CHECK(hypervolume({{1.0, 1.0}}, {0.0, 0.0}).volume == 1.0);
  CHECK(hypervolume({{2.0}}, {0.5}).volume == 1.5);
  CHECK(hypervolume({{2.0, 1.0, 1.0}, {1.0, 2.0, 1.0}}, {0.0, 0.0, 0.0}).volume == 3.0);
  CHECK(hypervolume({}, {0.0, 0.0}).volume == 0.0);

  // Dominated points change nothing; points under the reference are dropped
  // and flagged.
  HvResult with_dominated =
      hypervolume({{1.0, 2.0}, {2.0, 1.0}, {0.5, 0.5}}, {0.0, 0.0});
  CHECK(with_dominated.volume == 3.0);
  CHECK_FALSE(with_dominated.clipped);
  HvResult clipped = hypervolume({{1.0, 2.0}, {-1.0, 5.0}}, {0.0, 0.0});
  CHECK(clipped.volume == 2.0);
  CHECK(clipped.clipped);

  CHECK_THROWS_AS(hypervolume({{1, 1, 1, 1}}, {0, 0, 0, 0}), ParameterError);
  CHECK_THROWS_AS(hypervolume({{1.0}}, {0.0, 0.0}), DimensionError);
}

TEST_CASE("hypervolume matches rejection sampling in three dimensions") {
  std::vector<std::vector<double>> pts = {
      {0.5, 0.5, 0.9}, {0.9, 0.2, 0.2}, {0.2, 0.9, 0.4}, {0.6, 0.6, 0.5}};
  std::vector<double> ref = {0.0, 0.0, 0.0};
  const double exact = hypervolume(pts, ref).volume;

  RandomStream rng(777);
  const int n = 200000;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    const double u0 = rng.uniform(), u1 = rng.uniform(), u2 = rng.uniform();
    bool covered = false;
    for (const auto& p : pts)
      if (u0 <= p[0] && u1 <= p[1] && u2 <= p[2]) {
        covered = true;
        break;
      }
    hits += covered ? 1 : 0;
  }
  const double est = static_cast<double>(hits) / n;  // box volume is 1
  CHECK(std::fabs(est - exact) <= 0.01);
  CHECK(exact > 0.0);

  // Volume is monotone under adding points and invariant to their order.
  std::vector<std::vector<double>> fewer(pts.begin(), pts.begin() + 2);
  CHECK(hypervolume(fewer, ref).volume <= exact + 1e-15);
  std::vector<std::vector<double>> shuffled = {pts[2], pts[0], pts[3], pts[1]};
  CHECK(hypervolume(shuffled, ref).volume == doctest::Approx(exact).epsilon(1e-13));
}

TEST_CASE("reference point sits a margin below the feasible minimum") {
  std::vector<double> r = reference_point({{1.0, 1.0}, {2.0, 3.0}}, 0.1);
  REQUIRE(r.size() == 2);
  CHECK(r[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(r[1] == doctest::Approx(0.9).epsilon(1e-15));
  std::vector<double> exact = reference_point({{1.0, 5.0}, {4.0, 2.0}}, 0.0);
  CHECK(exact[0] == 1.0);
  CHECK(exact[1] == 2.0);
  CHECK_THROWS_AS(reference_point(std::vector<std::vector<double>>{}, 0.1), ParameterError);

  // The archive overload negates objectives before taking the minimum and
  // skips infeasible rows.
  ParetoArchive a(1, 2, 1);
  a.add({0.0}, {3.0, -1.0}, {-0.5}, 0);
  a.add({0.1}, {2.0, 4.0}, {-0.5}, 0);
  a.add({0.2}, {-9.0, -9.0}, {0.5}, 0);
  std::vector<double> ar = reference_point(a, 0.5);
  CHECK(ar[0] == doctest::Approx(-3.5).epsilon(1e-15));
  CHECK(ar[1] == doctest::Approx(-4.5).epsilon(1e-15));
}

TEST_CASE("archive tracks feasibility and its non-dominated set") {
  ParetoArchive a(2, 2, 1);
  a.add({0.0, 0.0}, {1.0, 2.0}, {-1.0}, 0);
  a.add({0.1, 0.1}, {2.0, 1.0}, {0.0}, 0);   // boundary counts as feasible
  a.add({0.2, 0.2}, {3.0, 3.0}, {-1.0}, 1);  // dominated
  a.add({0.3, 0.3}, {0.0, 0.0}, {0.1}, 1);   // best but infeasible
  CHECK(a.size() == 4);
  CHECK(a.feasible_indices() == std::vector<int>{0, 1, 2});
  CHECK(a.feasible_front() == std::vector<int>{0, 1});
  CHECK_THROWS_AS(a.add({0.0}, {1.0, 2.0}, {-1.0}, 0), DimensionError);

  Matrix xs = a.x_of({1, 3});
  CHECK(xs.rows() == 2);
  CHECK(xs.cols() == 2);
  CHECK(xs(0, 0) == 0.1);
  CHECK(xs(1, 1) == 0.3);
  Matrix f1 = a.column_of({0, 1, 2}, 1);
  CHECK(f1.rows() == 3);
  CHECK(f1(2, 0) == 3.0);
  CHECK_THROWS_AS(a.column_of({0}, 2), ParameterError);

  // Every front member must be feasible and undominated by feasible rows.
  for (int i : a.feasible_front()) {
    CHECK(a.entries()[i].feasible);
    for (int j : a.feasible_indices()) {
      if (j == i) continue;
      bool leq = true, strict = false;
      for (int k = 0; k < 2; ++k) {
        if (a.entries()[j].f[k] > a.entries()[i].f[k]) leq = false;
        if (a.entries()[j].f[k] < a.entries()[i].f[k]) strict = true;
      }
      CHECK_FALSE((leq && strict));
    }
  }
}

TEST_CASE("archive reports render the expected tables") {
  ParetoArchive a(2, 3, 1);
  a.add({-3.0, -1.0}, {0.02, 0.5, -0.9}, {-0.1}, 0);
  a.add({-4.0, -1.5}, {0.03, 0.6, -0.8}, {-0.2}, 1);  // dominated
  a.add({-3.5, -1.2}, {0.01, 0.4, -0.95}, {0.5}, 1);  // infeasible
  const std::string full = a.csv();
  CHECK(full.rfind("x0,x1,f0,f1,f2,c0,feasible,round\n", 0) == 0);
  CHECK(std::count(full.begin(), full.end(), '\n') == 4);
  CHECK(full.find(",0,1\n") != std::string::npos);  // infeasible row, round 1

  const std::string front = a.pareto_csv();
  CHECK(front == "candidate,acc,nll,ece,lr,wd\n0,0.9,0.5,0.02,0.001,0.1\n");

  ParetoArchive wrong(1, 2, 0);
  wrong.add({0.0}, {1.0, 1.0}, {}, 0);
  CHECK_THROWS_AS(wrong.pareto_csv(), ParameterError);
}

TEST_CASE("low-discrepancy grid is a shifted binary net") {
  RandomStream rng(31);
  Matrix u = sobol_grid(16, rng);
  REQUIRE(u.rows() == 2);
  REQUIRE(u.cols() == 16);
  for (int j = 0; j < 16; ++j) {
    CHECK(u(0, j) >= 0.0);
    CHECK(u(0, j) < 1.0);
    CHECK(u(1, j) >= 0.0);
    CHECK(u(1, j) < 1.0);
  }

  // Each axis is stratified: one point per interval of width 1/16, and the
  // sixteen quarter-by-quarter boxes hold exactly one point each.
  for (int dim = 0; dim < 2; ++dim) {
    std::vector<int> count(16, 0);
    for (int j = 0; j < 16; ++j) ++count[static_cast<int>(u(dim, j) * 16.0)];
    for (int c : count) CHECK(c == 1);
  }
  int boxes[4][4] = {};
  for (int j = 0; j < 16; ++j)
    ++boxes[static_cast<int>(u(0, j) * 4.0)][static_cast<int>(u(1, j) * 4.0)];
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) CHECK(boxes[r][c] == 1);

  // Identical stream state reproduces the grid; a fresh draw moves it.
  RandomStream again(31);
  Matrix v = sobol_grid(16, again);
  CHECK(max_abs_diff(u, v) == 0.0);
  Matrix w = sobol_grid(16, again);
  CHECK(max_abs_diff(u, w) > 0.0);

  CHECK_THROWS_AS(sobol_grid(0, rng), ParameterError);
}

TEST_CASE("acquisition vanishes for a candidate already observed") {
  Matrix x(2, 3);
  const double xs[3][2] = {{-4.0, -1.0}, {-3.0, -0.5}, {-4.5, -1.8}};
  for (int i = 0; i < 3; ++i) {
    x(0, i) = xs[i][0];
    x(1, i) = xs[i][1];
  }
  Matrix y0(3, 1), y1(3, 1);
  y0(0, 0) = 1.0;
  y0(1, 0) = 0.2;
  y0(2, 0) = 0.6;
  y1(0, 0) = 0.2;
  y1(1, 0) = 1.0;
  y1(2, 0) = 0.7;
  GpSurrogate g0(x, y0, noise_free());
  GpSurrogate g1(x, y1, noise_free());
  Matrix ell = Matrix::constant(2, 1, 1.0);
  g0.set_hyperparameters(ell, 1.0);
  g1.set_hyperparameters(ell, 1.0);

  ParetoArchive archive(2, 2, 0);
  for (int i = 0; i < 3; ++i) archive.add({xs[i][0], xs[i][1]}, {y0(i, 0), y1(i, 0)}, {}, 0);

  std::vector<double> ref = {-2.0, -2.0};
  RandomStream rng(5);
  const double at_known =
      qnehvi_acquire({&g0, &g1}, {}, archive, x.col(0), ref, 64, rng);
  CHECK(at_known <= 1e-10);

  // A genuinely new candidate carries positive expected gain.
  Matrix fresh(2, 1);
  fresh(0, 0) = -3.6;
  fresh(1, 0) = -1.2;
  RandomStream rng2(5);
  const double at_fresh =
      qnehvi_acquire({&g0, &g1}, {}, archive, fresh, ref, 64, rng2);
  CHECK(at_fresh > at_known);
  CHECK(at_fresh >= 0.0);

  // Fixed stream state makes the estimate reproducible.
  RandomStream a(5), b(5);
  const double va = qnehvi_acquire({&g0, &g1}, {}, archive, fresh, ref, 32, a);
  const double vb = qnehvi_acquire({&g0, &g1}, {}, archive, fresh, ref, 32, b);
  CHECK(va == vb);

  CHECK_THROWS_AS(qnehvi_acquire({&g0, &g1}, {}, archive, fresh, ref, 0, rng),
                  ParameterError);
  ParetoArchive empty(2, 2, 1);
  empty.add({0.0, 0.0}, {1.0, 1.0}, {1.0}, 0);
  CHECK_THROWS_AS(qnehvi_acquire({&g0, &g1}, {}, empty, fresh, ref, 8, rng),
                  ParameterError);
}

TEST_CASE("acquisition estimate matches gaussian quadrature") {
  // Two noise-free observations pin the historical draws, so the candidate
  // marginal is an independent bivariate normal and the expectation has a
  // two-dimensional integral form.
  Matrix x(1, 2);
  x(0, 0) = 0.0;
  x(0, 1) = 1.0;
  Matrix y0(2, 1), y1(2, 1);
  y0(0, 0) = 1.0;
  y0(1, 0) = 0.2;
  y1(0, 0) = 0.2;
  y1(1, 0) = 1.0;
  GpSurrogate g0(x, y0, noise_free());
  GpSurrogate g1(x, y1, noise_free());
  Matrix ell = Matrix::constant(1, 1, 1.0);
  g0.set_hyperparameters(ell, 1.0);
  g1.set_hyperparameters(ell, 1.0);

  ParetoArchive archive(1, 2, 0);
  archive.add({0.0}, {1.0, 0.2}, {}, 0);
  archive.add({1.0}, {0.2, 1.0}, {}, 0);

  Matrix cand = Matrix::constant(1, 1, 0.5);
  auto [m0, c0] = g0.posterior(cand);
  auto [m1, c1] = g1.posterior(cand);
  const double mu0 = m0(0, 0), sd0 = std::sqrt(c0(0, 0));
  const double mu1 = m1(0, 0), sd1 = std::sqrt(c1(0, 0));
  CHECK(sd0 > 0.1);  // the midpoint is genuinely uncertain

  std::vector<std::vector<double>> front = {{-1.0, -0.2}, {-0.2, -1.0}};
  std::vector<double> ref = {-1.5, -1.5};
  const double base = hypervolume(front, ref).volume;

  const int cells = 240;
  const double lo = -6.0, hi = 6.0, h = (hi - lo) / cells;
  double oracle = 0.0;
  for (int i = 0; i < cells; ++i) {
    const double z0 = lo + (i + 0.5) * h;
    const double w0 = std::exp(-0.5 * z0 * z0) / std::sqrt(2.0 * 3.14159265358979323846);
    for (int j = 0; j < cells; ++j) {
      const double z1 = lo + (j + 0.5) * h;
      const double w1 =
          std::exp(-0.5 * z1 * z1) / std::sqrt(2.0 * 3.14159265358979323846);
      std::vector<std::vector<double>> joined = front;
      joined.push_back({-(mu0 + sd0 * z0), -(mu1 + sd1 * z1)});
      const double gain = std::max(0.0, hypervolume(joined, ref).volume - base);
      oracle += gain * w0 * w1 * h * h;
    }
  }

  RandomStream rng(12345);
  const double mc = qnehvi_acquire({&g0, &g1}, {}, archive, cand, ref, 50000, rng);
  CHECK(oracle > 0.0);
  CHECK(std::fabs(mc - oracle) <= 0.02 * oracle + 0.003);
}

TEST_CASE("proposals stay inside the search box") {
  BoBounds bounds;
  ParetoArchive archive(2, 2, 0);
  archive.add({-4.0, -1.0}, {1.0, 0.2}, {}, 0);
  archive.add({-3.0, -0.5}, {0.2, 1.0}, {}, 0);
  Matrix x = archive.x_of({0, 1});
  GpSurrogate g0(x, archive.column_of({0, 1}, 0), GpConfig{});
  GpSurrogate g1(x, archive.column_of({0, 1}, 1), GpConfig{});

  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    RandomStream rng(seed);
    std::vector<double> p = propose(archive, {&g0, &g1}, {}, bounds, 32, 8, 0.1, rng);
    REQUIRE(p.size() == 2);
    CHECK(p[0] >= bounds.lo_log_lr);
    CHECK(p[0] <= bounds.hi_log_lr);
    CHECK(p[1] >= bounds.lo_log_wd);
    CHECK(p[1] <= bounds.hi_log_wd);
  }

  // Same stream state, same proposal.
  RandomStream r1(9), r2(9);
  std::vector<double> p1 = propose(archive, {&g0, &g1}, {}, bounds, 32, 8, 0.1, r1);
  std::vector<double> p2 = propose(archive, {&g0, &g1}, {}, bounds, 32, 8, 0.1, r2);
  CHECK(p1[0] == p2[0]);
  CHECK(p1[1] == p2[1]);

  // A budget of one returns the lone candidate.
  RandomStream r3(9), r4(9);
  std::vector<double> only = propose(archive, {&g0, &g1}, {}, bounds, 1, 4, 0.1, r3);
  Matrix u = sobol_grid(1, r4);
  CHECK(only[0] == bounds.lo_log_lr + u(0, 0) * (bounds.hi_log_lr - bounds.lo_log_lr));
  CHECK(only[1] == bounds.lo_log_wd + u(1, 0) * (bounds.hi_log_wd - bounds.lo_log_wd));

  CHECK_THROWS_AS(propose(archive, {&g0, &g1}, {}, bounds, 0, 4, 0.1, r3),
                  ParameterError);
}

TEST_CASE("without a feasible point the proposal is space filling") {
  BoBounds bounds;
  ParetoArchive archive(2, 2, 1);
  archive.add({-4.0, -1.0}, {1.0, 0.2}, {0.7}, 0);  // infeasible
  Matrix x = archive.x_of({0});
  GpSurrogate g0(x, archive.column_of({0}, 0), GpConfig{});
  GpSurrogate g1(x, archive.column_of({0}, 1), GpConfig{});
  GpSurrogate gc(x, Matrix::constant(1, 1, 0.7), GpConfig{});

  RandomStream run(42), replay(42);
  std::vector<double> p =
      propose(archive, {&g0, &g1}, {&gc}, bounds, 64, 8, 0.1, run);
  Matrix u = sobol_grid(64, replay);
  CHECK(p[0] == bounds.lo_log_lr + u(0, 0) * (bounds.hi_log_lr - bounds.lo_log_lr));
  CHECK(p[1] == bounds.lo_log_wd + u(1, 0) * (bounds.hi_log_wd - bounds.lo_log_wd));
}

TEST_CASE("operating point is the front member with the lowest second objective") {
  ParetoArchive a(1, 2, 1);
  a.add({0.0}, {0.3, 0.8}, {-1.0}, 0);
  a.add({0.1}, {0.1, 0.9}, {-1.0}, 0);
  a.add({0.2}, {0.9, 0.1}, {-1.0}, 0);
  a.add({0.3}, {1.0, 1.0}, {-1.0}, 0);   // dominated
  a.add({0.4}, {0.0, 0.0}, {1.0}, 0);    // infeasible
  CHECK(select_operating_point(a) == 2);

  ParetoArchive single(1, 2, 0);
  single.add({0.0}, {5.0, 5.0}, {}, 0);
  CHECK(select_operating_point(single) == 0);

  ParetoArchive none(1, 2, 1);
  none.add({0.0}, {0.0, 0.0}, {1.0}, 0);
  CHECK_THROWS_AS(select_operating_point(none), ParameterError);
}

TEST_CASE("guided search beats random search on the two-bowl landscape") {
  BoBounds bounds;
  const double span_u = bounds.hi_log_lr - bounds.lo_log_lr;
  const double span_v = bounds.hi_log_wd - bounds.lo_log_wd;
  auto eval_at = [&](double lx, double lw) {
    return bowls((lx - bounds.lo_log_lr) / span_u, (lw - bounds.lo_log_wd) / span_v);
  };
  const std::vector<double> ref = {-1.5, -1.5};

  int wins = 0;
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    RandomStream rng = RandomStream::derive(seed, "hpo/loop");
    ParetoArchive bo(2, 2, 0);
    Matrix u = sobol_grid(4, rng);
    for (int j = 0; j < 4; ++j) {
      const double lx = bounds.lo_log_lr + u(0, j) * span_u;
      const double lw = bounds.lo_log_wd + u(1, j) * span_v;
      bo.add({lx, lw}, eval_at(lx, lw), {}, 0);
    }
    for (int round = 1; round <= 16; ++round) {
      std::vector<int> all(bo.size());
      for (int i = 0; i < bo.size(); ++i) all[i] = i;
      Matrix xs = bo.x_of(all);
      std::vector<GpSurrogate> models;
      models.reserve(2);
      for (int m = 0; m < 2; ++m) {
        Matrix y = bo.column_of(all, m);
        double mean = 0.0;
        for (int i = 0; i < y.rows(); ++i) mean += y(i, 0);
        GpConfig cfg;
        cfg.noise_sd = 1e-3;
        cfg.prior_mean = mean / y.rows();
        cfg.fit_restarts = 2;
        cfg.fit_iters = 50;
        cfg.seed = seed * 100 + round * 2 + m;
        models.emplace_back(xs, y, cfg);
        models.back().fit();
      }
      std::vector<double> next =
          propose(bo, {&models[0], &models[1]}, {}, bounds, 96, 24, 0.1, rng);
      bo.add(next, eval_at(next[0], next[1]), {}, round);
    }

    RandomStream rnd = RandomStream::derive(seed, "hpo/random");
    ParetoArchive plain(2, 2, 0);
    for (int j = 0; j < 20; ++j) {
      const double lx = bounds.lo_log_lr + rnd.uniform() * span_u;
      const double lw = bounds.lo_log_wd + rnd.uniform() * span_v;
      plain.add({lx, lw}, eval_at(lx, lw), {}, j);
    }

    if (front_volume(bo, ref) >= front_volume(plain, ref)) ++wins;
  }
  CHECK(wins >= 2);
}
