// SPDX-License-Identifier: Apache-2.0
#include "blora/layer.hpp"

#include <cmath>
#include <utility>

#include "blora/error.hpp"
#include "blora/rng.hpp"

namespace blora {

namespace {

double softplus_val(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

double softplus_inv(double y) { return std::log(std::expm1(y)); }

Matrix softplus_elem(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) out(i, j) = softplus_val(x(i, j));
  return out;
}

}  // namespace

double lambda_value(double raw, double max_lambda) {
  // Same arithmetic as the tape-side sigmoid so training and inference agree.
  return max_lambda * 0.5 * (1.0 + std::tanh(0.5 * raw));
}

double lambda_raw_init(double init_lambda, double max_lambda) {
  double ratio = init_lambda / max_lambda;
  ratio = std::min(std::max(ratio, 1e-6), 1.0 - 1e-6);
  return std::log(ratio / (1.0 - ratio));
}

ad::Var lambda_on_tape(ad::Tape& t, ad::Var raw, double max_lambda) {
  return t.scale(ad::sigmoid(t, raw), max_lambda);
}

BayesLoraLayer::BayesLoraLayer(std::string prefix, Matrix w_pre, BayesLoraConfig cfg,
                               std::string lambda_name)
    : prefix_(std::move(prefix)),
      w_pre_(std::move(w_pre)),
      cfg_(cfg),
      lambda_name_(std::move(lambda_name)),
      flow_(cfg.inducing_rows * cfg.inducing_cols, cfg.flow_depth) {
  if (cfg_.lora_rank < 1) throw ParameterError("lora_rank must be at least 1");
  if (cfg_.alpha <= 0.0) throw ParameterError("alpha must be positive");
  if (cfg_.inducing_rows < 1 || cfg_.inducing_cols < 1)
    throw ParameterError("inducing grid sides must be at least 1");
  if (cfg_.max_sd_u <= 0.0) throw ParameterError("max_sd_u must be positive");
  if (cfg_.max_lambda <= 0.0) throw ParameterError("max_lambda must be positive");
  if (cfg_.init_lambda <= 0.0) throw ParameterError("init_lambda must be positive");
  if (cfg_.prior_sd <= 0.0) throw ParameterError("prior_sd must be positive");
  if (cfg_.init_d <= 0.0) throw ParameterError("init_d must be positive");
  if (cfg_.flow_depth < 0) throw ParameterError("flow_depth must be nonnegative");
}

double BayesLoraLayer::sigma_half_a() const {
  return cfg_.sqrt_width_scaling ? cfg_.prior_sd / std::sqrt(static_cast<double>(d_in()))
                                 : cfg_.prior_sd;
}

double BayesLoraLayer::sigma_half_b() const {
  return cfg_.sqrt_width_scaling ? cfg_.prior_sd / std::sqrt(static_cast<double>(rank()))
                                 : cfg_.prior_sd;
}

void BayesLoraLayer::init_params(ParamStore& store, RandomStream& rng) const {
  const double d_raw0 = softplus_inv(cfg_.init_d);
  auto add_factor = [&](const std::string& side, int inducing_dim, int target_dim) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(inducing_dim));
    store.add(prefix_ + side + ".z", sd * Matrix::randn(inducing_dim, target_dim, rng));
    store.add(prefix_ + side + ".d_raw", Matrix::constant(inducing_dim, 1, d_raw0));
  };
  add_factor("a_row", cfg_.inducing_rows, rank());
  add_factor("a_col", cfg_.inducing_cols, d_in());
  add_factor("b_row", cfg_.inducing_rows, d_out());
  add_factor("b_col", cfg_.inducing_cols, rank());
  store.add(prefix_ + "m", cfg_.init_m_sd * Matrix::randn(u_dim(), 1, rng));
  store.add(prefix_ + "log_sigma",
            Matrix::constant(u_dim(), 1, std::log(cfg_.max_sd_u / 2.0)));
  flow_.init_params(store, flow_prefix(), rng);
}

long BayesLoraLayer::param_count(const ParamStore& store) const {
  long n = 0;
  for (const auto& name : store.names())
    if (name.rfind(prefix_, 0) == 0) n += static_cast<long>(store.at(name).size());
  return n;
}

InducingPosterior BayesLoraLayer::posterior_from(const ParamStore& store) const {
  InducingPosterior post;
  post.m = store.at(prefix_ + "m");
  post.log_sigma = store.at(prefix_ + "log_sigma");
  post.whitened = cfg_.whitened;
  post.max_sd_u = cfg_.max_sd_u;
  return post;
}

CovarianceFactor BayesLoraLayer::factor_from(const ParamStore& store,
                                             const std::string& side) const {
  return CovarianceFactor(store.at(prefix_ + side + ".z"),
                          softplus_elem(store.at(prefix_ + side + ".d_raw")));
}

const BayesLoraLayer::Projectors& BayesLoraLayer::projectors(const ParamStore& store) const {
  if (!cache_valid_) {
    cache_.row_a = projector(factor_from(store, "a_row"), Side::kRow);
    cache_.col_a = projector(factor_from(store, "a_col"), Side::kCol);
    cache_.row_b = projector(factor_from(store, "b_row"), Side::kRow);
    cache_.col_b = projector(factor_from(store, "b_col"), Side::kCol);
    cache_valid_ = true;
  }
  return cache_;
}

void BayesLoraLayer::invalidate_cache() const { cache_valid_ = false; }

std::vector<AdapterSample> BayesLoraLayer::sample_adapters(const ParamStore& store, int s,
                                                           RandomStream& rng) const {
  if (s < 1) throw ParameterError("sample count must be at least 1");
  const double lam = lambda_value(store.at(lambda_name_)(0, 0), cfg_.max_lambda);
  const InducingPosterior post = posterior_from(store);
  const Projectors& proj = projectors(store);
  std::vector<AdapterSample> out;
  out.reserve(s);
  for (int i = 0; i < s; ++i) {
    // Draw order per sample: inducing noise, then A noise, then B noise.
    const Matrix u0 = post.sample(rng);
    const auto [u, logdet] = flow_.forward_with_logdet(store, flow_prefix(), u0);
    (void)logdet;
    const Matrix u_mat = u.reshaped(cfg_.inducing_rows, cfg_.inducing_cols);
    AdapterSample smp;
    smp.u_raw = u_mat;
    const Matrix abar = matmul(matmul(proj.row_a, u_mat), proj.col_a);
    const Matrix bbar = matmul(matmul(proj.row_b, u_mat), proj.col_b);
    smp.a = abar + lam * (sigma_half_a() * Matrix::randn(rank(), d_in(), rng));
    smp.b = bbar + lam * (sigma_half_b() * Matrix::randn(d_out(), rank(), rng));
    smp.delta_w = alpha_over_r() * matmul(smp.b, smp.a);
    out.push_back(std::move(smp));
  }
  return out;
}

std::vector<Matrix> BayesLoraLayer::forward(const Matrix& x,
                                            const std::vector<AdapterSample>& samples) const {
  if (x.rows() != d_in())
    throw DimensionError("forward input rows do not match the base weight columns");
  std::vector<Matrix> out;
  out.reserve(samples.size());
  const Matrix base = matmul(w_pre_, x);
  for (const auto& s : samples)
    out.push_back(base + alpha_over_r() * matmul(s.b, matmul(s.a, x)));
  return out;
}

Matrix BayesLoraLayer::merge_deterministic(const ParamStore& store) const {
  const Matrix& m = store.at(prefix_ + "m");
  const auto [u, logdet] = flow_.forward_with_logdet(store, flow_prefix(), m);
  (void)logdet;
  const Matrix u_mat = u.reshaped(cfg_.inducing_rows, cfg_.inducing_cols);
  const Projectors& proj = projectors(store);
  const Matrix abar = matmul(matmul(proj.row_a, u_mat), proj.col_a);
  const Matrix bbar = matmul(matmul(proj.row_b, u_mat), proj.col_b);
  return w_pre_ + alpha_over_r() * matmul(bbar, abar);
}

void BayesLoraLayer::params_to_tape(ad::Tape& t, const ParamStore& store) const {
  for (const auto& name : store.names())
    if (name.rfind(prefix_, 0) == 0) t.param(name, store.at(name));
}

ad::Var BayesLoraLayer::factor_projector_on_tape(ad::Tape& t, const std::string& side,
                                                 Side which) const {
  ad::Var z = t.param_var(prefix_ + side + ".z");
  ad::Var d = ad::softplus(t, t.param_var(prefix_ + side + ".d_raw"));
  ad::Var k = t.add(t.matmul(z, t.transpose(z)), ad::diag_embed(t, t.mul(d, d)));
  ad::Var kinvz = t.solve_psd(k, z, /*jitter_retry=*/true);
  return which == Side::kRow ? t.transpose(kinvz) : kinvz;
}

BayesLoraLayer::TapeProjectors BayesLoraLayer::projectors_on_tape(ad::Tape& t) const {
  TapeProjectors p;
  p.row_a = factor_projector_on_tape(t, "a_row", Side::kRow);
  p.col_a = factor_projector_on_tape(t, "a_col", Side::kCol);
  p.row_b = factor_projector_on_tape(t, "b_row", Side::kRow);
  p.col_b = factor_projector_on_tape(t, "b_col", Side::kCol);
  return p;
}

BayesLoraLayer::TapeSample BayesLoraLayer::sample_on_tape(ad::Tape& t,
                                                          const TapeProjectors& proj,
                                                          ad::Var lambda,
                                                          RandomStream& rng) const {
  TapeSample s;
  // Identical draw order to sample_adapters so the two paths share noise
  // when handed the same stream state.
  s.eps_u = Matrix::randn(u_dim(), 1, rng);
  ad::Var m = t.param_var(prefix_ + "m");
  ad::Var sigma = t.clamp_max(t.exp(t.param_var(prefix_ + "log_sigma")), cfg_.max_sd_u);
  s.u0 = t.add(m, t.mul(sigma, t.input(s.eps_u)));
  auto [u, logdet] = flow_.forward_on_tape(t, flow_prefix(), s.u0);
  s.u = u;
  s.logdet = logdet;
  ad::Var u_mat = t.reshape(u, cfg_.inducing_rows, cfg_.inducing_cols);
  ad::Var abar = t.matmul(t.matmul(proj.row_a, u_mat), proj.col_a);
  ad::Var bbar = t.matmul(t.matmul(proj.row_b, u_mat), proj.col_b);
  ad::Var noise_a = t.input(sigma_half_a() * Matrix::randn(rank(), d_in(), rng));
  ad::Var noise_b = t.input(sigma_half_b() * Matrix::randn(d_out(), rank(), rng));
  s.a = t.add(abar, t.mul(lambda, noise_a));
  s.b = t.add(bbar, t.mul(lambda, noise_b));
  return s;
}

ad::Var BayesLoraLayer::forward_on_tape(ad::Tape& t, const TapeSample& s, ad::Var x) const {
  ad::Var base = t.matmul(t.input(w_pre_), x);
  return t.add(base, t.scale(t.matmul(s.b, t.matmul(s.a, x)), alpha_over_r()));
}

LogDensityFn BayesLoraLayer::kron_prior_logdensity(const ParamStore& store) const {
  // Covariance = K_row (x) K_col over the row-major flattening of U (the
  // row-major vector of U is the column-stacked vector of U^T).
  CovarianceFactor row = factor_from(store, "a_row");
  CovarianceFactor col = factor_from(store, "a_col");
  const int r = cfg_.inducing_rows;
  const int c = cfg_.inducing_cols;
  const double logdet = kron_logdet(row, col);
  return [row, col, r, c, logdet](const Matrix& u_vec) {
    if (u_vec.rows() != r * c || u_vec.cols() != 1)
      throw DimensionError("prior log-density input must be a flattened inducing vector");
    const Matrix u_mat = u_vec.reshaped(r, c);
    // Quadratic form tr(U^T K_row^{-1} U K_col^{-1}) without the Kronecker
    // product.
    const Matrix left = solve_psd_with(row.chol(), u_mat);
    const Matrix w = transpose(solve_psd_with(col.chol(), transpose(left)));
    const double quad = sum(hadamard(u_mat, w));
    const double d = static_cast<double>(r) * c;
    return -0.5 * (d * kLog2Pi + logdet + quad);
  };
}

}  // namespace blora
