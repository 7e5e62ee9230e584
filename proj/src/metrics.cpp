// SPDX-License-Identifier: Apache-2.0
#include "blora/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "blora/error.hpp"
#include "blora/rng.hpp"

namespace blora {

namespace {

constexpr double kProbFloor = 1e-12;

int argmax_low_index(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace

OptionScore score_options(const std::vector<std::vector<double>>& option_token_logprobs) {
  if (option_token_logprobs.empty()) throw ParameterError("no options to score");
  OptionScore out;
  std::vector<double> sums;
  for (const auto& toks : option_token_logprobs) {
    if (toks.empty()) throw ParameterError("option with no token log-probs");
    double s = std::accumulate(toks.begin(), toks.end(), 0.0);
    sums.push_back(s);
    out.scores.push_back(s / static_cast<double>(toks.size()));
  }
  double top = *std::max_element(out.scores.begin(), out.scores.end());
  double z = 0.0;
  for (double s : out.scores) z += std::exp(s - top);
  for (double s : out.scores) out.probs.push_back(std::exp(s - top) / z);
  out.predicted = 0;
  for (int j = 1; j < static_cast<int>(out.scores.size()); ++j) {
    if (out.scores[j] > out.scores[out.predicted] ||
        (out.scores[j] == out.scores[out.predicted] && sums[j] > sums[out.predicted]))
      out.predicted = j;
  }
  return out;
}

void validate(const PredictionBatch& batch) {
  if (batch.probs.size() != batch.labels.size())
    throw ParameterError("prediction and label counts differ");
  if (!batch.option_sums.empty() && batch.option_sums.size() != batch.probs.size())
    throw ParameterError("option sum count does not match the batch");
  for (std::size_t i = 0; i < batch.probs.size(); ++i) {
    const auto& p = batch.probs[i];
    if (p.empty()) throw ParameterError("empty probability vector at item " + std::to_string(i));
    double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9)
      throw ParameterError("probabilities at item " + std::to_string(i) +
                           " sum to " + std::to_string(total));
    if (batch.labels[i] < 0 || batch.labels[i] >= static_cast<int>(p.size()))
      throw ParameterError("label out of range at item " + std::to_string(i));
  }
}

double accuracy(const PredictionBatch& batch) {
  validate(batch);
  if (batch.probs.empty()) throw ParameterError("empty batch");
  long hits = 0;
  for (std::size_t i = 0; i < batch.probs.size(); ++i)
    if (argmax_low_index(batch.probs[i]) == batch.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(batch.probs.size());
}

double ece_15bin(const PredictionBatch& batch, std::array<BinStat, kEceBins>* bins_out) {
  validate(batch);
  if (batch.probs.empty()) throw ParameterError("empty batch");
  std::array<long, kEceBins> count{};
  std::array<double, kEceBins> conf_sum{};
  std::array<double, kEceBins> acc_sum{};
  for (std::size_t i = 0; i < batch.probs.size(); ++i) {
    const auto& p = batch.probs[i];
    int pred = argmax_low_index(p);
    double c = p[pred];
    for (int b = 1; b <= kEceBins; ++b) {
      double lo = static_cast<double>(b - 1) / kEceBins;
      double hi = static_cast<double>(b) / kEceBins;
      if (c > lo && c <= hi) {
        ++count[b - 1];
        conf_sum[b - 1] += c;
        acc_sum[b - 1] += (pred == batch.labels[i]) ? 1.0 : 0.0;
        break;
      }
    }
  }
  const double n = static_cast<double>(batch.probs.size());
  double ece = 0.0;
  for (int b = 0; b < kEceBins; ++b) {
    if (count[b] == 0) continue;
    double mean_conf = conf_sum[b] / count[b];
    double mean_acc = acc_sum[b] / count[b];
    ece += (count[b] / n) * std::abs(mean_acc - mean_conf);
  }
  if (bins_out) {
    for (int b = 0; b < kEceBins; ++b) {
      (*bins_out)[b].count = count[b];
      (*bins_out)[b].mean_conf = count[b] ? conf_sum[b] / count[b] : 0.0;
      (*bins_out)[b].mean_acc = count[b] ? acc_sum[b] / count[b] : 0.0;
    }
  }
  return ece;
}

double nll(const PredictionBatch& batch) {
  validate(batch);
  if (batch.probs.empty()) throw ParameterError("empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.probs.size(); ++i)
    total += -std::log(std::max(batch.probs[i][batch.labels[i]], kProbFloor));
  return total / static_cast<double>(batch.probs.size());
}

double brier(const PredictionBatch& batch) {
  validate(batch);
  if (batch.probs.empty()) throw ParameterError("empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.probs.size(); ++i) {
    const auto& p = batch.probs[i];
    for (int k = 0; k < static_cast<int>(p.size()); ++k) {
      double y = (k == batch.labels[i]) ? 1.0 : 0.0;
      total += (p[k] - y) * (p[k] - y);
    }
  }
  return total / static_cast<double>(batch.probs.size());
}

CalibrationReport evaluate(const PredictionBatch& batch) {
  CalibrationReport rep;
  rep.acc = accuracy(batch);
  rep.ece = ece_15bin(batch, &rep.bins);
  rep.nll = nll(batch);
  rep.brier = brier(batch);
  rep.n_items = static_cast<long>(batch.probs.size());
  return rep;
}

std::vector<int> top_entropy_subset(const std::vector<std::vector<double>>& reference_probs,
                                    double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ParameterError("fraction must be in (0, 1]");
  const int n = static_cast<int>(reference_probs.size());
  std::vector<double> entropy(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (double p : reference_probs[i])
      if (p > 0.0) entropy[i] -= p * std::log(p);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return entropy[a] > entropy[b]; });
  const int keep = static_cast<int>(std::ceil(fraction * n));
  order.resize(std::min(keep, n));
  std::sort(order.begin(), order.end());
  return order;
}

PredictionBatch predictions_of(const Model& model, const Batch& data, int n_samples,
                               RandomStream& rng) {
  Matrix probs = model.predict_probs(data.x, n_samples, rng);
  PredictionBatch batch;
  batch.labels = data.labels;
  batch.probs.resize(data.labels.size());
  for (int i = 0; i < probs.cols(); ++i) {
    batch.probs[i].resize(probs.rows());
    for (int k = 0; k < probs.rows(); ++k) batch.probs[i][k] = probs(k, i);
  }
  return batch;
}

std::vector<SweepRow> mc_sweep(const Model& model, const Batch& data,
                               const std::vector<int>& s_values, RandomStream& rng) {
  std::vector<SweepRow> rows;
  for (int s : s_values) {
    if (s < 1) throw ParameterError("sample counts must be at least 1");
    // Every row restarts from the same stream state, so a repeated S value
    // reproduces its row exactly.
    RandomStream row_rng = rng;
    auto t0 = std::chrono::steady_clock::now();
    PredictionBatch preds = predictions_of(model, data, s, row_rng);
    auto t1 = std::chrono::steady_clock::now();
    SweepRow row;
    row.s = s;
    row.acc = accuracy(preds);
    row.nll = nll(preds);
    row.ece = ece_15bin(preds);
    row.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    rows.push_back(row);
  }
  return rows;
}

Batch gather(const Batch& data, const std::vector<int>& idx) {
  Batch out;
  out.x = Matrix(data.x.rows(), static_cast<int>(idx.size()));
  out.labels.resize(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    for (int r = 0; r < data.x.rows(); ++r) out.x(r, static_cast<int>(j)) = data.x(r, idx[j]);
    out.labels[j] = data.labels[idx[j]];
  }
  return out;
}

}  // namespace blora
