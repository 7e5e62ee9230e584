// SPDX-License-Identifier: Apache-2.0
#include "blora/kron.hpp"

#include <cmath>
#include <string>

#include "blora/log.hpp"
#include "blora/rng.hpp"

namespace blora {

static void validate_d(const Matrix& d, int inducing_dim) {
  if (d.cols() != 1 || d.rows() != inducing_dim)
    throw DimensionError("covariance factor: d must be inducing_dim x 1");
  for (int i = 0; i < d.rows(); ++i)
    if (!(d(i, 0) > 0.0))
      throw ParameterError("covariance factor: d entries must be positive (entry " +
                           std::to_string(i) + ")");
}

CovarianceFactor::CovarianceFactor(Matrix z, Matrix d)
    : z_(std::move(z)), d_(std::move(d)) {
  if (z_.rows() <= 0 || z_.cols() <= 0)
    throw DimensionError("covariance factor: empty z");
  validate_d(d_, z_.rows());
}

CovarianceFactor CovarianceFactor::init(int inducing_dim, int target_dim, double init_d,
                                        RandomStream& rng) {
  Matrix z = Matrix::randn(inducing_dim, target_dim, rng);
  const double sd = 1.0 / std::sqrt(static_cast<double>(inducing_dim));
  z = sd * z;
  return CovarianceFactor(std::move(z), Matrix::constant(inducing_dim, 1, init_d));
}

void CovarianceFactor::update(Matrix z, Matrix d) {
  if (z.rows() != z_.rows() || z.cols() != z_.cols())
    throw DimensionError("covariance factor update: z shape changed");
  validate_d(d, z.rows());
  z_ = std::move(z);
  d_ = std::move(d);
  chol_valid_ = false;
}

const Matrix& CovarianceFactor::chol() const {
  if (!chol_valid_) {
    const Matrix k = assemble_k(*this);
    try {
      chol_ = cholesky(k);
    } catch (const DecompositionError& e) {
      log_warning(std::string("covariance cholesky failed (") + e.what() +
                  "), retrying with 1e-8 jitter");
      Matrix kj = k;
      for (int i = 0; i < k.rows(); ++i) kj(i, i) += 1e-8;
      chol_ = cholesky(kj);
    }
    chol_valid_ = true;
  }
  return chol_;
}

Matrix assemble_k(const CovarianceFactor& f) {
  validate_d(f.d(), f.inducing_dim());
  Matrix k = matmul(f.z(), transpose(f.z()));
  for (int i = 0; i < k.rows(); ++i) k(i, i) += f.d()(i, 0) * f.d()(i, 0);
  return k;
}

Matrix projector(const CovarianceFactor& f, Side side) {
  const Matrix& l = f.chol();
  // K^{-1} Z, computed against the cached factor.
  Matrix kinv_z = solve_psd_with(l, f.z());
  if (side == Side::kCol) return kinv_z;
  return transpose(kinv_z);  // Z^T K^{-1} for a symmetric K
}

double kron_logdet(const CovarianceFactor& row, const CovarianceFactor& col) {
  const auto ld = [](const CovarianceFactor& f) {
    const Matrix& l = f.chol();
    double s = 0.0;
    for (int i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
    return 2.0 * s;
  };
  return col.inducing_dim() * ld(row) + row.inducing_dim() * ld(col);
}

Matrix sample_matrix_normal(const Matrix& mean, const Matrix& chol_row,
                            const Matrix& chol_col, RandomStream& rng) {
  if (chol_row.rows() != chol_row.cols() || chol_col.rows() != chol_col.cols())
    throw DimensionError("sample_matrix_normal: factors must be square");
  if (mean.rows() != chol_row.rows() || mean.cols() != chol_col.rows())
    throw DimensionError("sample_matrix_normal: mean shape mismatch");
  Matrix e = Matrix::randn(mean.rows(), mean.cols(), rng);
  return mean + matmul(matmul(chol_row, e), transpose(chol_col));
}

}  // namespace blora
