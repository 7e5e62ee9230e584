// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "blora/error.hpp"
#include "blora/kernels.hpp"
#include "blora/rng.hpp"

using namespace blora;

namespace {

std::vector<double> random_vec(std::size_t n, RandomStream& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("dispatch exposes a valid active variant") {
  const kern::Ops& ops = kern::active();
  CHECK(ops.matmul != nullptr);
  CHECK(ops.dot != nullptr);
  const char* name = kern::active_name();
  CHECK((std::string(name) == "scalar" || std::string(name) == "avx2"));
}

TEST_CASE("scalar and simd variants agree on every kernel") {
  if (!kern::avx2_available()) return;
  const kern::Ops& s = kern::scalar_ops();
  const kern::Ops& v = kern::avx2_ops();
  RandomStream rng(123);

  // Sizes straddle the vector width so remainders are exercised.
  for (std::size_t n : {1u, 3u, 4u, 7u, 8u, 64u, 257u}) {
    auto x = random_vec(n, rng);
    auto y = random_vec(n, rng);

    std::vector<double> a(n), b(n);
    s.add(x.data(), y.data(), a.data(), n);
    v.add(x.data(), y.data(), b.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(a[i] == b[i]);

    s.sub(x.data(), y.data(), a.data(), n);
    v.sub(x.data(), y.data(), b.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(a[i] == b[i]);

    s.mul(x.data(), y.data(), a.data(), n);
    v.mul(x.data(), y.data(), b.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(a[i] == b[i]);

    s.scale(x.data(), 1.7, a.data(), n);
    v.scale(x.data(), 1.7, b.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(a[i] == b[i]);

    a = y;
    b = y;
    s.axpy(0.3, x.data(), a.data(), n);
    v.axpy(0.3, x.data(), b.data(), n);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(std::fabs(a[i] - b[i]) <= 1e-15 * (1.0 + std::fabs(a[i])));

    const double ds = s.dot(x.data(), y.data(), n);
    const double dv = v.dot(x.data(), y.data(), n);
    CHECK(std::fabs(ds - dv) <= 1e-12 * (1.0 + std::fabs(ds)));

    const double ss = s.sum(x.data(), n);
    const double sv = v.sum(x.data(), n);
    CHECK(std::fabs(ss - sv) <= 1e-12 * (1.0 + std::fabs(ss)));
  }
}

TEST_CASE("matmul variants agree across shapes") {
  if (!kern::avx2_available()) return;
  const kern::Ops& s = kern::scalar_ops();
  const kern::Ops& v = kern::avx2_ops();
  RandomStream rng(7);

  struct Shape {
    int m, k, n;
  };
  for (Shape sh : {Shape{1, 1, 1}, Shape{2, 3, 4}, Shape{5, 7, 3}, Shape{8, 8, 8},
                   Shape{13, 9, 21}, Shape{32, 17, 6}}) {
    auto a = random_vec(static_cast<std::size_t>(sh.m) * sh.k, rng);
    auto b = random_vec(static_cast<std::size_t>(sh.k) * sh.n, rng);
    std::vector<double> cs(static_cast<std::size_t>(sh.m) * sh.n);
    std::vector<double> cv(cs.size());
    s.matmul(a.data(), b.data(), cs.data(), sh.m, sh.k, sh.n);
    v.matmul(a.data(), b.data(), cv.data(), sh.m, sh.k, sh.n);
    for (std::size_t i = 0; i < cs.size(); ++i)
      CHECK(std::fabs(cs[i] - cv[i]) <= 1e-13 * (1.0 + std::fabs(cs[i])));
  }
}

TEST_CASE("force_variant switches the active table and back") {
  const std::string before = kern::active_name();
  kern::force_variant("scalar");
  CHECK(std::string(kern::active_name()) == "scalar");
  kern::force_variant("auto");
  CHECK(std::string(kern::active_name()) == before);
  CHECK_THROWS_AS(kern::force_variant("neon"), ParameterError);
}
