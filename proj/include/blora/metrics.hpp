// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "blora/model.hpp"

namespace blora {

class RandomStream;

// Per-item predictive distributions with gold labels. Vectors may differ in
// length across items (variable option counts). option_sums optionally holds
// the unnormalized sum log-likelihood per option for tie-breaking.
struct PredictionBatch {
  std::vector<std::vector<double>> probs;
  std::vector<int> labels;
  std::vector<std::vector<double>> option_sums;
};

struct BinStat {
  long count = 0;
  double mean_conf = 0.0;
  double mean_acc = 0.0;
};

inline constexpr int kEceBins = 15;

struct CalibrationReport {
  double acc = 0.0;
  double ece = 0.0;
  double nll = 0.0;
  double brier = 0.0;
  std::array<BinStat, kEceBins> bins{};
  long n_items = 0;
};

// Length-normalized option scoring: s_j is the mean token log-prob, the
// predictive distribution is softmax(s), and the prediction is argmax with
// ties broken by larger sum log-likelihood, then by lower option index.
struct OptionScore {
  std::vector<double> scores;
  std::vector<double> probs;
  int predicted = 0;
};
OptionScore score_options(const std::vector<std::vector<double>>& option_token_logprobs);

// Checks the batch invariants (matching lengths, probabilities summing to
// one within 1e-9, labels in range); violations raise a parameter error.
void validate(const PredictionBatch& batch);

double accuracy(const PredictionBatch& batch);

// Expected calibration error over 15 equal-width confidence bins
// ((b-1)/15, b/15]; confidence is the max predicted probability. Optionally
// reports the per-bin statistics.
double ece_15bin(const PredictionBatch& batch, std::array<BinStat, kEceBins>* bins_out = nullptr);

// Mean negative log probability of the gold label, floored at 1e-12.
double nll(const PredictionBatch& batch);

// Mean over items of sum_k (p_k - y_k)^2 with y the one-hot gold label.
double brier(const PredictionBatch& batch);

CalibrationReport evaluate(const PredictionBatch& batch);

// Indices of the ceil(fraction * N) items with the highest Shannon entropy
// under the reference model, ties broken by lower index.
std::vector<int> top_entropy_subset(const std::vector<std::vector<double>>& reference_probs,
                                    double fraction);

PredictionBatch predictions_of(const Model& model, const Batch& data, int n_samples,
                               RandomStream& rng);

// One evaluation of the same frozen model per sample count, with wall time.
struct SweepRow {
  int s = 0;
  double acc = 0.0;
  double nll = 0.0;
  double ece = 0.0;
  double wall_seconds = 0.0;
};
std::vector<SweepRow> mc_sweep(const Model& model, const Batch& data,
                               const std::vector<int>& s_values, RandomStream& rng);

}  // namespace blora
