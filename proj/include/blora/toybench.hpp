// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blora/layer.hpp"
#include "blora/metrics.hpp"
#include "blora/model.hpp"
#include "blora/trainer.hpp"

namespace blora {

// Gaussian-mixture classification task with a controlled distribution shift
// for the OOD split: rotation by shift_angle_deg in a random 2-plane plus a
// mean displacement of norm shift_mean.
struct SyntheticTask {
  int n_classes = 4;
  int input_dim = 16;
  int n_pretrain = 2000;
  int n_train = 2000;
  int n_val = 500;
  int n_test = 500;
  double mean_scale = 2.0;
  double noise_sd = 1.4;
  double shift_angle_deg = 30.0;
  double shift_mean = 1.0;
  std::uint64_t seed = 0;
};

struct TaskBundle {
  Batch pretrain;
  Batch train;
  Batch val;
  Batch test;
  Batch ood;  // test-sized draw pushed through the shift
};

// x -> rot * x + offset (per column). Zero shift parameters give exactly the
// identity map.
struct ShiftTransform {
  Matrix rot;
  Matrix offset;
  Matrix apply(const Matrix& x) const;
};
ShiftTransform make_shift(const SyntheticTask& spec);

TaskBundle make_task(const SyntheticTask& spec);

// Frozen two-layer perceptron backbone: logits = w2 tanh(w1 x + b1) + b2.
struct MlpBase {
  Matrix w1, b1, w2, b2;
};

// Fully trainable perceptron used for pretraining and as a plain baseline.
class PlainMlpModel : public Model {
 public:
  PlainMlpModel(int input_dim, int hidden, int k, std::uint64_t seed);

  ParamStore& params() override { return store_; }
  const ParamStore& params() const override { return store_; }
  int n_classes() const override { return k_; }
  Matrix predict_probs(const Matrix& x, int n_samples, RandomStream& rng) const override;
  std::pair<ad::Var, ElboBreakdown> loss_on_tape(ad::Tape& t, const Batch& batch,
                                                 int n_samples, double kl_scale,
                                                 bool scale_kl_w, double label_smoothing,
                                                 RandomStream& rng) override;
  MlpBase base() const;

 private:
  int k_;
  ParamStore store_;
};

// Trains a fresh perceptron on the pretraining split and freezes it.
MlpBase pretrain_base(const TaskBundle& data, int input_dim, int hidden, int k,
                      std::uint64_t seed);

// Backbone with stochastic low-rank adapters on both layers; one shared
// conditional scale.
class BayesLoraMlp : public Model {
 public:
  BayesLoraMlp(MlpBase base, const BayesLoraConfig& cfg, std::uint64_t seed);

  ParamStore& params() override { return store_; }
  const ParamStore& params() const override { return store_; }
  int n_classes() const override { return base_.w2.rows(); }
  Matrix predict_probs(const Matrix& x, int n_samples, RandomStream& rng) const override;
  std::pair<ad::Var, ElboBreakdown> loss_on_tape(ad::Tape& t, const Batch& batch,
                                                 int n_samples, double kl_scale,
                                                 bool scale_kl_w, double label_smoothing,
                                                 RandomStream& rng) override;
  void after_update() override;

  const MlpBase& base() const { return base_; }
  const BayesLoraLayer& fc1() const { return l1_; }
  const BayesLoraLayer& fc2() const { return l2_; }
  // Collapses both adapters at the flow-pushed posterior mean.
  MlpBase merged() const;

 private:
  MlpBase base_;
  BayesLoraConfig cfg_;
  BayesLoraLayer l1_;
  BayesLoraLayer l2_;
  ParamStore store_;
};

// Deterministic low-rank adapters trained by penalized maximum likelihood.
class MapLoraMlp : public Model {
 public:
  MapLoraMlp(MlpBase base, int rank, double alpha, std::uint64_t seed);

  ParamStore& params() override { return store_; }
  const ParamStore& params() const override { return store_; }
  int n_classes() const override { return base_.w2.rows(); }
  Matrix predict_probs(const Matrix& x, int n_samples, RandomStream& rng) const override;
  std::pair<ad::Var, ElboBreakdown> loss_on_tape(ad::Tape& t, const Batch& batch,
                                                 int n_samples, double kl_scale,
                                                 bool scale_kl_w, double label_smoothing,
                                                 RandomStream& rng) override;
  const MlpBase& base() const { return base_; }

 private:
  MlpBase base_;
  int rank_;
  double alpha_;
  ParamStore store_;
};

// Point-mass variant of the Bayesian configuration (tiny posterior spread,
// pinned tiny conditional scale, no flow), keeping the other settings.
BayesLoraConfig degenerate_of(const BayesLoraConfig& cfg);

// Closed-form trainable-parameter counts for the census checks. The shared
// scale parameter is counted once per model, not per layer.
long analytic_bayes_layer_count(int d_out, int d_in, const BayesLoraConfig& cfg);
long analytic_map_layer_count(int d_out, int d_in, int rank);
long analytic_model_count(const std::string& method, int input_dim, int hidden, int k,
                          int rank, const BayesLoraConfig& cfg);

// Baseline/ablation grid over methods and seeds; failures are recorded per
// cell and the grid continues.
struct GridSpec {
  SyntheticTask task;
  BayesLoraConfig bayes_cfg;
  TrainConfig train_cfg;
  std::vector<std::string> methods;  // map_lora | bayes_lora | degenerate
  std::vector<std::uint64_t> seeds;
  int hidden = 32;
  int eval_samples = 4;
};
struct GridRow {
  std::string method;
  std::uint64_t seed = 0;
  std::string split;  // id | ood
  double acc = 0.0, ece = 0.0, nll = 0.0, brier = 0.0;
  long param_count = 0;
  double wall_seconds = 0.0;
  bool failed = false;
  std::string error;
};
std::vector<GridRow> run_grid(const GridSpec& spec);
std::string grid_csv(const std::vector<GridRow>& rows);

// Token-classification sequence task: the label of each position is a fixed
// random function of the current and previous token, so attention over the
// neighborhood is informative.
struct SeqTask {
  int vocab = 8;
  int embed_dim = 8;
  int seq_len = 6;
  int n_classes = 4;
  int n_train = 200;
  int n_val = 50;
  std::uint64_t seed = 0;
};
struct SeqBundle {
  std::vector<Batch> train;  // one batch per sequence: embed_dim x seq_len
  std::vector<Batch> val;
  Matrix embed;  // embed_dim x vocab, frozen
};
SeqBundle make_seq_task(const SeqTask& spec);

// Frozen single-block attention backbone.
struct AttnBase {
  Matrix w_q, w_k, w_v, w_o;
};
AttnBase pretrain_attention_base(const SeqBundle& data, const SeqTask& spec, int epochs,
                                 std::uint64_t seed);

// Attention block with adapters on the query, key, and output-head
// projections; the value projection stays frozen.
class BayesAttentionToy : public Model {
 public:
  BayesAttentionToy(AttnBase base, const SeqTask& spec, const BayesLoraConfig& cfg,
                    std::uint64_t seed);

  ParamStore& params() override { return store_; }
  const ParamStore& params() const override { return store_; }
  int n_classes() const override { return base_.w_o.rows(); }
  Matrix predict_probs(const Matrix& x, int n_samples, RandomStream& rng) const override;
  std::pair<ad::Var, ElboBreakdown> loss_on_tape(ad::Tape& t, const Batch& batch,
                                                 int n_samples, double kl_scale,
                                                 bool scale_kl_w, double label_smoothing,
                                                 RandomStream& rng) override;
  void after_update() override;
  const AttnBase& base() const { return base_; }

 private:
  AttnBase base_;
  BayesLoraConfig cfg_;
  BayesLoraLayer lq_;
  BayesLoraLayer lk_;
  BayesLoraLayer lo_;
  ParamStore store_;
};

// Token-level evaluation over a list of sequences, merged into one batch of
// per-token items.
PredictionBatch eval_sequences(const Model& model, const std::vector<Batch>& sequences,
                               int n_samples, RandomStream& rng);

}  // namespace blora
