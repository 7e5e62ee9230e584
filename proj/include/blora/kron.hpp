// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "blora/matrix.hpp"

namespace blora {

class RandomStream;

// One side of a separable (Kronecker-structured) covariance over a weight
// block: K = Z Z^T + diag(d)^2 with Z of shape inducing_dim x target_dim and
// d a positive vector of length inducing_dim. The full covariance over the
// block is K_col (x) K_row built from a row-side and a col-side factor.
class CovarianceFactor {
 public:
  // z: inducing_dim x target_dim, d: inducing_dim x 1 with positive entries.
  CovarianceFactor(Matrix z, Matrix d);

  // Fresh factor: Z entries ~ N(0, 1/sqrt(inducing_dim)), d filled with
  // init_d. Keeps K well conditioned at start.
  static CovarianceFactor init(int inducing_dim, int target_dim, double init_d,
                               RandomStream& rng);

  int inducing_dim() const { return z_.rows(); }
  int target_dim() const { return z_.cols(); }
  const Matrix& z() const { return z_; }
  const Matrix& d() const { return d_; }

  // Replaces parameters and invalidates the cached Cholesky factor.
  void update(Matrix z, Matrix d);

  // Cached lower Cholesky factor of K. On a failed factorization, retries
  // once with +1e-8 I (logged); a second failure propagates.
  const Matrix& chol() const;

 private:
  Matrix z_;
  Matrix d_;
  mutable Matrix chol_;
  mutable bool chol_valid_ = false;
};

enum class Side { kRow, kCol };

// K = Z Z^T + diag(d)^2.
Matrix assemble_k(const CovarianceFactor& f);

// Projection onto the inducing representation:
//   row side: Z^T K^{-1}   (target_dim x inducing_dim)
//   col side: K^{-1} Z     (inducing_dim x target_dim)
// so the conditional mean of a block given inducing values U is
// projector(row) * U * projector(col).
Matrix projector(const CovarianceFactor& f, Side side);

// log det(K_col (x) K_row) without forming the Kronecker product:
// col_dim * log det(K_row) + row_dim * log det(K_col).
double kron_logdet(const CovarianceFactor& row, const CovarianceFactor& col);

// Draw mean + L_row E L_col^T with E iid standard normal entries filled in
// row-major order.
Matrix sample_matrix_normal(const Matrix& mean, const Matrix& chol_row,
                            const Matrix& chol_col, RandomStream& rng);

}  // namespace blora
