// SPDX-License-Identifier: Apache-2.0
#include "blora/posterior.hpp"

#include <cmath>

#include "blora/flow.hpp"
#include "blora/params.hpp"
#include "blora/rng.hpp"

namespace blora {

namespace {
}

Matrix InducingPosterior::sigma() const {
  Matrix s = exp_elem(log_sigma);
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.at(i) > max_sd_u) s.at(i) = max_sd_u;
  return s;
}

Matrix InducingPosterior::sample(RandomStream& rng, Matrix* eps_out) const {
  const Matrix s = sigma();
  Matrix eps = Matrix::randn(dim(), 1, rng);
  Matrix u0 = m;
  for (int i = 0; i < dim(); ++i) u0(i, 0) += s(i, 0) * eps(i, 0);
  if (eps_out) *eps_out = std::move(eps);
  return u0;
}

double InducingPosterior::log_density(const Matrix& u0) const {
  if (u0.rows() != dim() || u0.cols() != 1)
    throw DimensionError("posterior log_density expects d x 1");
  const Matrix s = sigma();
  double total = 0.0;
  for (int i = 0; i < dim(); ++i) {
    const double z = (u0(i, 0) - m(i, 0)) / s(i, 0);
    total += -0.5 * kLog2Pi - std::log(s(i, 0)) - 0.5 * z * z;
  }
  return total;
}

double gaussian_kl(const Matrix& m_q, const Matrix& s_q_diag, const Matrix& m_p,
                   const Matrix& k_p) {
  const int d = m_q.rows();
  if (m_q.cols() != 1 || s_q_diag.cols() != 1 || m_p.cols() != 1)
    throw DimensionError("gaussian_kl expects column vectors");
  if (s_q_diag.rows() != d || m_p.rows() != d || k_p.rows() != d || k_p.cols() != d)
    throw DimensionError("gaussian_kl dimension mismatch");

  const Matrix l = cholesky(k_p);
  // tr(K_p^{-1} S_q) with diagonal S_q: sum_i s_i * (K_p^{-1})_{ii}.
  const Matrix kinv = solve_psd_with(l, Matrix::identity(d));
  double tr_term = 0.0;
  for (int i = 0; i < d; ++i) tr_term += s_q_diag(i, 0) * kinv(i, i);

  const Matrix dm = m_p - m_q;
  const double quad = dot(dm, solve_psd_with(l, dm));

  double logdet_p = 0.0;
  for (int i = 0; i < d; ++i) logdet_p += std::log(l(i, i));
  logdet_p *= 2.0;

  double logdet_q = 0.0;
  for (int i = 0; i < d; ++i) {
    if (!(s_q_diag(i, 0) > 0.0))
      throw ParameterError("gaussian_kl: q variances must be positive");
    logdet_q += std::log(s_q_diag(i, 0));
  }

  return 0.5 * (tr_term + quad - d + logdet_p - logdet_q);
}

double whitened_kl(const InducingPosterior& post) {
  if (!post.whitened) throw ParameterError("whitened_kl requires a whitened posterior");
  const Matrix s = post.sigma();
  const int d = post.dim();
  double acc = 0.0;
  for (int i = 0; i < d; ++i) {
    const double s2 = s(i, 0) * s(i, 0);
    acc += s2 + post.m(i, 0) * post.m(i, 0) - std::log(s2);
  }
  return 0.5 * (acc - d);
}

double conditional_kl(double lambda, long d_total) {
  if (!(lambda > 0.0)) throw ParameterError("conditional_kl requires lambda > 0");
  if (d_total < 0) throw ParameterError("conditional_kl requires d_total >= 0");
  return 0.5 * static_cast<double>(d_total) *
         (lambda * lambda - 1.0 - 2.0 * std::log(lambda));
}

double standard_normal_logdensity(const Matrix& u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u.at(i) * u.at(i);
  return -0.5 * static_cast<double>(u.size()) * kLog2Pi - 0.5 * acc;
}

McEstimate mc_flow_kl(const InducingPosterior& post, const FlowStack& flow,
                      const ParamStore& flow_params, const std::string& flow_prefix,
                      const LogDensityFn& prior_logdensity, long n, RandomStream& rng) {
  if (n < 1) throw ParameterError("mc_flow_kl requires n >= 1");
  double acc = 0.0;
  double acc2 = 0.0;
  for (long s = 0; s < n; ++s) {
    const Matrix u0 = post.sample(rng);
    const double lq = post.log_density(u0);
    const auto [u, logdet] = flow.forward_with_logdet(flow_params, flow_prefix, u0);
    const double lp = prior_logdensity(u.reshaped(post.dim(), 1));
    const double term = lq - logdet - lp;
    if (!std::isfinite(term))
      throw NumericError("mc_flow_kl: non-finite term at sample " + std::to_string(s));
    acc += term;
    acc2 += term * term;
  }
  McEstimate est;
  est.n = n;
  est.value = acc / static_cast<double>(n);
  const double var = std::max(0.0, acc2 / static_cast<double>(n) - est.value * est.value);
  est.std_error = n > 1 ? std::sqrt(var / static_cast<double>(n)) : 0.0;
  return est;
}

}  // namespace blora
