// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "blora/metrics.hpp"
#include "blora/rng.hpp"
#include "testutil.hpp"

using namespace blora;

namespace {

PredictionBatch two_class_batch(const std::vector<double>& gold_probs,
                                const std::vector<int>& labels) {
  PredictionBatch b;
  b.labels = labels;
  for (std::size_t i = 0; i < gold_probs.size(); ++i) {
    double p = gold_probs[i];
    if (labels[i] == 0)
      b.probs.push_back({p, 1.0 - p});
    else
      b.probs.push_back({1.0 - p, p});
  }
  return b;
}

PredictionBatch random_batch(int n, int k, RandomStream& rng) {
  PredictionBatch b;
  for (int i = 0; i < n; ++i) {
    std::vector<double> p(k);
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
      double e = std::exp(rng.normal());
      p[j] = e;
      total += e;
    }
    for (int j = 0; j < k; ++j) p[j] /= total;
    b.probs.push_back(p);
    b.labels.push_back(static_cast<int>(rng.uniform_int(k)));
  }
  return b;
}

// Independent binning: scan items once per bin against explicit edges.
double ece_bruteforce(const PredictionBatch& b) {
  const int n = static_cast<int>(b.probs.size());
  double ece = 0.0;
  for (int bin = 1; bin <= 15; ++bin) {
    double lo = (bin - 1) / 15.0;
    double hi = bin / 15.0;
    long count = 0;
    double conf = 0.0, acc = 0.0;
    for (int i = 0; i < n; ++i) {
      int pred = 0;
      for (int j = 1; j < static_cast<int>(b.probs[i].size()); ++j)
        if (b.probs[i][j] > b.probs[i][pred]) pred = j;
      double c = b.probs[i][pred];
      if (c > lo && c <= hi) {
        ++count;
        conf += c;
        acc += (pred == b.labels[i]) ? 1.0 : 0.0;
      }
    }
    if (count) ece += (static_cast<double>(count) / n) * std::abs(acc / count - conf / count);
  }
  return ece;
}

}  // namespace

TEST_CASE("option scores are mean token log-probs") {
  auto r = score_options({{-1.0, -1.0}, {-0.5, -2.5, -0.3}});
  CHECK(r.scores[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(r.scores[1] == doctest::Approx(-1.1).epsilon(1e-12));
  CHECK(r.predicted == 0);
  CHECK(r.probs[0] + r.probs[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.probs[0] > r.probs[1]);
}

TEST_CASE("option ties fall back to sum then index") {
  auto equal = score_options({{-1.0, -1.0}, {-1.0, -1.0}});
  CHECK(equal.predicted == 0);
  // Same mean, larger sum: three tokens at -1 beat two tokens at -1.
  auto by_sum = score_options({{-1.0, -1.0}, {-1.0, -1.0, -1.0}});
  CHECK(by_sum.scores[0] == doctest::Approx(by_sum.scores[1]).epsilon(1e-12));
  CHECK(by_sum.predicted == 0);
  auto by_sum2 = score_options({{-1.0, -1.0, -1.0}, {-1.0, -1.0}});
  CHECK(by_sum2.predicted == 1);
}

TEST_CASE("single option is certain") {
  auto r = score_options({{-2.0, -3.0}});
  CHECK(r.predicted == 0);
  CHECK(r.probs[0] == 1.0);
}

TEST_CASE("empty option is rejected") {
  CHECK_THROWS_AS(score_options({{-1.0}, {}}), ParameterError);
  CHECK_THROWS_AS(score_options({}), ParameterError);
}

TEST_CASE("option scoring is invariant to a uniform log-prob shift") {
  RandomStream rng = RandomStream::derive(21, "test/metrics-shift");
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> opts;
    int n_opt = 2 + static_cast<int>(rng.uniform_int(3));
    for (int j = 0; j < n_opt; ++j) {
      std::vector<double> toks(1 + rng.uniform_int(4));
      for (auto& t : toks) t = -3.0 * rng.uniform();
      opts.push_back(toks);
    }
    auto base = score_options(opts);
    auto shifted = opts;
    for (auto& o : shifted)
      for (auto& t : o) t += 0.7;
    auto moved = score_options(shifted);
    CHECK(moved.predicted == base.predicted);
    for (int j = 0; j < n_opt; ++j)
      CHECK(moved.probs[j] == doctest::Approx(base.probs[j]).epsilon(1e-9));
  }
}

TEST_CASE("single-bin ece hand case") {
  PredictionBatch b;
  for (int i = 0; i < 10; ++i) {
    b.probs.push_back({0.95, 0.05});
    b.labels.push_back(0);
  }
  CHECK(ece_15bin(b) == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("perfect one-hot predictions have zero ece") {
  PredictionBatch b;
  b.probs = {{1.0, 0.0}, {0.0, 1.0}};
  b.labels = {0, 1};
  CHECK(ece_15bin(b) == 0.0);
  CHECK(nll(b) == 0.0);
  CHECK(brier(b) == 0.0);
  CHECK(accuracy(b) == 1.0);
}

TEST_CASE("ece matches an independent brute-force binning") {
  RandomStream rng = RandomStream::derive(22, "test/metrics-ece");
  PredictionBatch b = random_batch(200, 4, rng);
  double fast = ece_15bin(b);
  CHECK(fast == doctest::Approx(ece_bruteforce(b)).epsilon(1e-12));
  CHECK(fast >= 0.0);
  CHECK(fast <= 1.0);
}

TEST_CASE("report bins reproduce the ece and count every item") {
  RandomStream rng = RandomStream::derive(23, "test/metrics-bins");
  PredictionBatch b = random_batch(157, 3, rng);
  CalibrationReport rep = evaluate(b);
  long total = 0;
  double recomputed = 0.0;
  for (const auto& bin : rep.bins) {
    total += bin.count;
    if (bin.count)
      recomputed += (static_cast<double>(bin.count) / rep.n_items) *
                    std::abs(bin.mean_acc - bin.mean_conf);
  }
  CHECK(total == rep.n_items);
  CHECK(recomputed == doctest::Approx(rep.ece).epsilon(1e-12));
}

TEST_CASE("nll hand cases and flooring") {
  CHECK(nll(two_class_batch({1.0, 1.0}, {0, 1})) == 0.0);
  double expect = -(std::log(0.5) + std::log(0.25)) / 2.0;
  CHECK(nll(two_class_batch({0.5, 0.25}, {0, 1})) == doctest::Approx(expect).epsilon(1e-12));
  double floored = nll(two_class_batch({0.0}, {0}));
  CHECK(floored == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
  CHECK(floored > 27.6);
}

TEST_CASE("brier hand cases") {
  CHECK(brier(two_class_batch({0.5}, {0})) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(brier(two_class_batch({1.0}, {1})) == doctest::Approx(0.0).epsilon(1e-12));
  // One-hot on the wrong class.
  PredictionBatch worst;
  worst.probs = {{1.0, 0.0}};
  worst.labels = {1};
  CHECK(brier(worst) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("metric bounds hold on random batches") {
  RandomStream rng = RandomStream::derive(24, "test/metrics-bounds");
  for (int trial = 0; trial < 10; ++trial) {
    PredictionBatch b = random_batch(50, 2 + static_cast<int>(rng.uniform_int(4)), rng);
    CalibrationReport rep = evaluate(b);
    CHECK(rep.ece >= 0.0);
    CHECK(rep.ece <= 1.0);
    CHECK(rep.nll >= 0.0);
    CHECK(rep.brier >= 0.0);
    CHECK(rep.brier <= 2.0);
    CHECK(rep.acc >= 0.0);
    CHECK(rep.acc <= 1.0);
  }
}

TEST_CASE("malformed batches are rejected") {
  PredictionBatch bad_sum;
  bad_sum.probs = {{0.5, 0.4}};
  bad_sum.labels = {0};
  CHECK_THROWS_AS(nll(bad_sum), ParameterError);
  PredictionBatch bad_label;
  bad_label.probs = {{0.5, 0.5}};
  bad_label.labels = {2};
  CHECK_THROWS_AS(accuracy(bad_label), ParameterError);
  PredictionBatch mismatched;
  mismatched.probs = {{0.5, 0.5}};
  mismatched.labels = {0, 1};
  CHECK_THROWS_AS(brier(mismatched), ParameterError);
  PredictionBatch empty;
  CHECK_THROWS_AS(ece_15bin(empty), ParameterError);
}

TEST_CASE("entropy subset keeps everything at fraction one") {
  std::vector<std::vector<double>> probs = {{0.5, 0.5}, {1.0, 0.0}, {0.7, 0.3}};
  auto all = top_entropy_subset(probs, 1.0);
  CHECK(all == std::vector<int>{0, 1, 2});
}

TEST_CASE("entropy subset prefers the uniform item") {
  std::vector<std::vector<double>> probs = {{0.5, 0.5}, {1.0, 0.0}};
  auto half = top_entropy_subset(probs, 0.5);
  CHECK(half == std::vector<int>{0});
}

TEST_CASE("entropy subset matches a full sort oracle") {
  RandomStream rng = RandomStream::derive(25, "test/metrics-entropy");
  PredictionBatch b = random_batch(100, 5, rng);
  auto got = top_entropy_subset(b.probs, 0.25);
  std::vector<double> entropy(100, 0.0);
  for (int i = 0; i < 100; ++i)
    for (double p : b.probs[i])
      if (p > 0.0) entropy[i] -= p * std::log(p);
  std::vector<int> order(100);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int c) { return entropy[a] > entropy[c]; });
  order.resize(25);
  std::sort(order.begin(), order.end());
  CHECK(got == order);
}

TEST_CASE("entropy ties break toward the lower index") {
  std::vector<std::vector<double>> probs = {{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}};
  auto one = top_entropy_subset(probs, 0.4);
  CHECK(one == std::vector<int>{0, 1});
  CHECK_THROWS_AS(top_entropy_subset(probs, 0.0), ParameterError);
  CHECK_THROWS_AS(top_entropy_subset(probs, 1.5), ParameterError);
}
