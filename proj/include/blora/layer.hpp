// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "blora/flow.hpp"
#include "blora/kron.hpp"
#include "blora/matrix.hpp"
#include "blora/params.hpp"
#include "blora/posterior.hpp"
#include "blora/tape.hpp"

namespace blora {

// Static configuration of a Bayesian LoRA adapter.
struct BayesLoraConfig {
  int lora_rank = 8;
  double alpha = 16.0;
  int inducing_rows = 9;
  int inducing_cols = 9;
  int flow_depth = 1;
  bool whitened = true;
  double max_sd_u = 0.1;
  double init_lambda = 1e-3;
  double max_lambda = 0.03;
  double prior_sd = 0.1;
  bool sqrt_width_scaling = true;
  double init_d = 0.1;
  double init_m_sd = 0.01;

  // Point-mass limit: near-zero posterior variance, pinned tiny lambda, no
  // flow. Recovers deterministic LoRA behavior.
  static BayesLoraConfig degenerate_preset() {
    BayesLoraConfig c;
    c.max_sd_u = 1e-3;
    c.init_lambda = 1e-4;
    c.max_lambda = 1e-4;
    c.flow_depth = 0;
    return c;
  }
};

// One stochastic weight realization.
struct AdapterSample {
  Matrix a;        // r x d_in
  Matrix b;        // d_out x r
  Matrix delta_w;  // (alpha/r) * b * a
  Matrix u_raw;    // post-flow inducing draw, inducing_rows x inducing_cols
};

// The unconstrained-to-constrained map for the global conditional scale:
// lambda = max_lambda * sigmoid(raw), so lambda is always in (0, max_lambda).
double lambda_value(double raw, double max_lambda);
double lambda_raw_init(double init_lambda, double max_lambda);
ad::Var lambda_on_tape(ad::Tape& t, ad::Var raw, double max_lambda);

// A frozen base weight plus a sampled low-rank update. Both low-rank factors
// are diffused from one shared inducing draw through per-branch projector
// pairs; conditional noise is isotropic with scale lambda * prior_sd
// (optionally / sqrt(fan_in)).
//
// Parameters live in an external ParamStore under this layer's prefix:
//   <p>.a_row.z, <p>.a_row.d_raw, <p>.a_col.z, <p>.a_col.d_raw,
//   <p>.b_row.z, <p>.b_row.d_raw, <p>.b_col.z, <p>.b_col.d_raw,
//   <p>.m, <p>.log_sigma, <p>.flow.<l>.{w1,b1,w2s,b2s,w2t,b2t}
// plus one shared "<lambda_name>" scalar owned by the enclosing model.
class BayesLoraLayer {
 public:
  BayesLoraLayer(std::string prefix, Matrix w_pre, BayesLoraConfig cfg,
                 std::string lambda_name = "lambda_raw");

  int d_in() const { return w_pre_.cols(); }
  int d_out() const { return w_pre_.rows(); }
  int rank() const { return cfg_.lora_rank; }
  int u_dim() const { return cfg_.inducing_rows * cfg_.inducing_cols; }
  long weight_dim() const { return static_cast<long>(d_out()) * d_in(); }
  double alpha_over_r() const { return cfg_.alpha / cfg_.lora_rank; }
  double sigma_half_a() const;
  double sigma_half_b() const;
  const Matrix& w_pre() const { return w_pre_; }
  const BayesLoraConfig& config() const { return cfg_; }
  const FlowStack& flow() const { return flow_; }
  const std::string& prefix() const { return prefix_; }
  std::string flow_prefix() const { return prefix_ + "flow."; }

  // Registers freshly initialized parameters (not the shared lambda).
  void init_params(ParamStore& store, RandomStream& rng) const;

  // Trainable-parameter count under this layer's prefix.
  long param_count(const ParamStore& store) const;

  InducingPosterior posterior_from(const ParamStore& store) const;

  // Draw s weight realizations. Deterministic for a fixed rng state.
  std::vector<AdapterSample> sample_adapters(const ParamStore& store, int s,
                                             RandomStream& rng) const;

  // Per sample: w_pre x + (alpha/r) b (a x); never materializes delta_w.
  std::vector<Matrix> forward(const Matrix& x, const std::vector<AdapterSample>& samples) const;

  // W_pre + (alpha/r) Bbar Abar evaluated at the flow-pushed posterior mean;
  // usable with zero sampling at inference.
  Matrix merge_deterministic(const ParamStore& store) const;

  // Tape-side machinery for training. Projectors are built once per step and
  // shared across the Monte-Carlo samples.
  struct TapeProjectors {
    ad::Var row_a, col_a, row_b, col_b;
  };
  struct TapeSample {
    ad::Var a;       // r x d_in
    ad::Var b;       // d_out x r
    ad::Var u0;      // pre-flow draw, u_dim x 1
    ad::Var u;       // post-flow, u_dim x 1
    ad::Var logdet;  // 1 x 1
    Matrix eps_u;    // the standard-normal draw behind u0
  };
  // Registers this layer's parameters from the store onto the tape.
  void params_to_tape(ad::Tape& t, const ParamStore& store) const;
  TapeProjectors projectors_on_tape(ad::Tape& t) const;
  TapeSample sample_on_tape(ad::Tape& t, const TapeProjectors& proj, ad::Var lambda,
                            RandomStream& rng) const;
  // Forward one sample on the tape: w_pre x + (alpha/r) b (a x).
  ad::Var forward_on_tape(ad::Tape& t, const TapeSample& s, ad::Var x) const;

  // Kronecker prior log-density over the flattened (row-major) inducing
  // matrix for the non-whitened path, built from the A-branch factors.
  LogDensityFn kron_prior_logdensity(const ParamStore& store) const;

  // Drops cached projector values; call after parameter updates.
  void invalidate_cache() const;

 private:
  struct Projectors {
    Matrix row_a, col_a, row_b, col_b;
  };
  const Projectors& projectors(const ParamStore& store) const;
  CovarianceFactor factor_from(const ParamStore& store, const std::string& side) const;
  ad::Var factor_projector_on_tape(ad::Tape& t, const std::string& side, Side which) const;

  std::string prefix_;
  Matrix w_pre_;
  BayesLoraConfig cfg_;
  std::string lambda_name_;
  FlowStack flow_;

  mutable Projectors cache_;
  mutable bool cache_valid_ = false;
};

}  // namespace blora
