// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "blora/layer.hpp"
#include "blora/model.hpp"

namespace blora {

// Optimization and objective settings. The KL scale follows the rule
// kl_scale_base / steps_per_epoch; train() fills steps_per_epoch in from the
// dataset, so standalone elbo_step calls default to one step per epoch.
struct TrainConfig {
  double learning_rate = 5e-4;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-5;
  int epochs = 10;
  int batch_size = 16;
  int mc_train = 2;
  int mc_eval = 2;
  double kl_scale_base = 0.2;
  int steps_per_epoch = 1;
  bool scale_kl_w = true;
  double label_smoothing = 0.1;
  int eval_every = 2;
  double grad_clip = 1.0;
  std::vector<int> milestones = {4, 6};
  double lr_decay = 0.1;
  std::uint64_t seed = 0;
};
void validate(const TrainConfig& cfg);

// (1 - eps) on the true class plus eps / k everywhere, as a k x 1 column.
Matrix smoothed_targets(int label, int k, double eps);
// One smoothed column per batch item, k x n.
Matrix smoothed_target_matrix(const std::vector<int>& labels, int k, double eps);

double kl_scale_value(double base, int steps_per_epoch);

// Learning-rate multiplier for an epoch: decay once per milestone reached.
double lr_multiplier(const std::vector<int>& milestones, double decay, int epoch);

// Builds the negative per-item ELBO for adapter models on a tape whose
// parameters are already registered. logits_for_sample receives the
// per-layer weight draws for one MC sample and returns n_classes x n logits.
// kl_u uses the closed form when every layer is whitened with no flow, and
// otherwise a Monte-Carlo estimate sharing the data-pass draws.
struct ElboParts {
  ad::Var loss;
  ElboBreakdown breakdown;
};
using LogitsBuilder = std::function<ad::Var(
    ad::Tape&, const std::vector<BayesLoraLayer::TapeSample>&, int)>;
ElboParts compose_elbo(ad::Tape& t, const std::vector<const BayesLoraLayer*>& layers,
                       const LogitsBuilder& logits_for_sample, const Batch& batch,
                       int n_samples, double kl_scale, bool scale_kl_w,
                       double label_smoothing, const std::string& lambda_name,
                       double max_lambda, RandomStream& rng);

// One objective evaluation with gradients; deterministic for a fixed stream
// state. Non-finite terms raise a numeric error naming the offending term.
std::pair<ElboBreakdown, std::map<std::string, Matrix>> elbo_step(Model& model,
                                                                  const Batch& batch,
                                                                  const TrainConfig& cfg,
                                                                  RandomStream& rng);

// Decoupled-weight-decay adaptive optimizer with bias correction.
class AdamW {
 public:
  AdamW(double lr, double beta1, double beta2, double eps, double wd);
  // Applies one update; lr_scale multiplies the base rate (schedule hook).
  void step(ParamStore& params, const std::map<std::string, Matrix>& grads,
            double lr_scale = 1.0);
  long steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, wd_;
  long t_ = 0;
  std::map<std::string, Matrix> m_;
  std::map<std::string, Matrix> v_;
};

// Scales gradients in place so their global L2 norm is at most max_norm;
// returns the pre-clip norm.
double clip_global_norm(std::map<std::string, Matrix>& grads, double max_norm);

struct EpochRecord {
  int epoch = 0;
  ElboBreakdown mean_breakdown;
  double train_loss = 0.0;  // mean per-item negative ELBO across steps
  double lr = 0.0;
  bool evaluated = false;
  double val_nll = 0.0;
  double val_acc = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  ParamStore best_params;
  int best_epoch = -1;  // -1 selects the initial parameters
  double best_val_nll = 0.0;
  double initial_val_nll = 0.0;
  std::vector<EpochRecord> history;
  bool diverged = false;
};

// Full loop: shuffled minibatches, schedule, periodic validation, selection
// of the checkpoint with the lowest validation NLL (the initial parameters
// compete too). The model is left at the selected checkpoint. A non-finite
// loss aborts with the last completed epoch's parameters and diverged set.
TrainResult train(Model& model, const Batch& train_data, const Batch& val_data,
                  const TrainConfig& cfg);

}  // namespace blora
