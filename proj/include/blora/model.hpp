// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "blora/matrix.hpp"
#include "blora/params.hpp"
#include "blora/tape.hpp"

namespace blora {

class RandomStream;

// A labeled classification batch: one column of x per item.
struct Batch {
  Matrix x;                 // input_dim x n
  std::vector<int> labels;  // n entries in [0, n_classes)

  int n() const { return static_cast<int>(labels.size()); }
};

// Column subset of a batch.
Batch gather(const Batch& data, const std::vector<int>& idx);

// Reported decomposition of one training objective evaluation.
struct ElboBreakdown {
  double data_term = 0.0;  // MC expected log-likelihood of the batch
  double kl_u = 0.0;
  double kl_w = 0.0;
  double elbo = 0.0;  // data_term - kl_scale * (kl_u + kl_w)
  double kl_scale = 0.0;
  int n_mc = 0;
};

// What the training loop and the evaluation sweeps need from a model. All
// trainable parameters live in the ParamStore; frozen base weights do not.
class Model {
 public:
  virtual ~Model() = default;

  virtual ParamStore& params() = 0;
  virtual const ParamStore& params() const = 0;
  virtual int n_classes() const = 0;

  // Predictive distribution, n_classes x batch: the arithmetic mean of
  // per-sample softmax outputs over n_samples draws. Deterministic models
  // ignore n_samples and the stream.
  virtual Matrix predict_probs(const Matrix& x, int n_samples, RandomStream& rng) const = 0;

  // Builds the scalar training loss (the negative per-item ELBO) on the tape
  // and reports the term decomposition at the current parameters.
  virtual std::pair<ad::Var, ElboBreakdown> loss_on_tape(ad::Tape& t, const Batch& batch,
                                                         int n_samples, double kl_scale,
                                                         bool scale_kl_w,
                                                         double label_smoothing,
                                                         RandomStream& rng) = 0;

  // Called after every optimizer update so cached factorizations refresh.
  virtual void after_update() {}

  long param_count() const { return params().total_size(); }
};

}  // namespace blora
