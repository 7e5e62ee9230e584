// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

#include "blora/matrix.hpp"

namespace blora {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

class RandomStream;
class FlowStack;
class ParamStore;

// Diagonal Gaussian base posterior q0 over the flattened inducing matrix.
// In whitened mode the prior over the (pre-flow) inducing values is standard
// normal; otherwise the Kronecker prior from the covariance factors applies.
struct InducingPosterior {
  Matrix m;          // d x 1
  Matrix log_sigma;  // d x 1
  bool whitened = true;
  double max_sd_u = 0.1;

  int dim() const { return m.rows(); }

  // sigma = exp(log_sigma) hard-clamped to (0, max_sd_u].
  Matrix sigma() const;

  // m + sigma .* eps, eps iid standard normal. Also returns eps when asked.
  Matrix sample(RandomStream& rng, Matrix* eps_out = nullptr) const;

  // log q0(u0) for the diagonal Gaussian.
  double log_density(const Matrix& u0) const;
};

// How a KL value was obtained, with the bookkeeping the trainer reports.
struct KlReport {
  double kl_u = 0.0;
  double kl_w = 0.0;
  enum class Method { kClosedForm, kMonteCarlo } method = Method::kClosedForm;
  long n_samples = 0;
  double kl_u_std_error = 0.0;
};

// Monte-Carlo estimate with its standard error.
struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
  long n = 0;
};

// KL(N(m_q, diag(s_q)) || N(m_p, k_p)) for a diagonal q and full-covariance
// p; s_q_diag holds the q variances.
double gaussian_kl(const Matrix& m_q, const Matrix& s_q_diag, const Matrix& m_p,
                   const Matrix& k_p);

// Closed-form KL of the whitened posterior against the standard normal:
// (1/2)(sum sigma_i^2 + ||m||^2 - d - sum log sigma_i^2).
double whitened_kl(const InducingPosterior& post);

// Closed-form conditional KL over the weights given inducing values:
// (d_total/2)(lambda^2 - 1 - 2 log lambda). Zero iff lambda = 1.
double conditional_kl(double lambda, long d_total);

// Log-density of u under the flattened posterior. d x 1 input.
using LogDensityFn = std::function<double(const Matrix&)>;

// Standard-normal log-density over d coordinates.
double standard_normal_logdensity(const Matrix& u);

// MC estimate of E_{u0 ~ q0}[log q0(u0) - log|det J(u0)| - log p(T(u0))]
// with the flow applied to the flattened sample. Seeded and deterministic.
McEstimate mc_flow_kl(const InducingPosterior& post, const FlowStack& flow,
                      const ParamStore& flow_params, const std::string& flow_prefix,
                      const LogDensityFn& prior_logdensity, long n, RandomStream& rng);

}  // namespace blora
