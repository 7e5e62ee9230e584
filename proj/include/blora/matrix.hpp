// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <initializer_list>
#include <vector>

#include "blora/error.hpp"

namespace blora {

class RandomStream;

// Dense row-major matrix of doubles. Vectors are column matrices (n x 1).
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw DimensionError("negative matrix dimension");
    a_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix zeros(int r, int c) { return Matrix(r, c); }
  static Matrix constant(int r, int c, double v);
  static Matrix identity(int n);
  static Matrix diag(const std::vector<double>& d);
  static Matrix randn(int r, int c, RandomStream& rng);
  static Matrix column(const std::vector<double>& v);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return a_.size(); }
  bool empty() const { return a_.empty(); }

  double& operator()(int i, int j) { return a_[static_cast<std::size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return a_[static_cast<std::size_t>(i) * cols_ + j]; }
  double& at(std::size_t i) { return a_[i]; }
  double at(std::size_t i) const { return a_[i]; }

  double* data() { return a_.data(); }
  const double* data() const { return a_.data(); }

  // Same storage, new shape (row-major reinterpretation).
  Matrix reshaped(int r, int c) const;

  Matrix col(int j) const;
  Matrix row(int i) const;
  void set_col(int j, const Matrix& v);

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool is_finite() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> a_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix operator*(double alpha, const Matrix& a);
Matrix& operator+=(Matrix& a, const Matrix& b);

// y += alpha * x, in place.
void axpy(double alpha, const Matrix& x, Matrix& y);

Matrix exp_elem(const Matrix& a);
Matrix log_elem(const Matrix& a);
Matrix tanh_elem(const Matrix& a);

double sum(const Matrix& a);
double dot(const Matrix& a, const Matrix& b);
double trace(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
double fro_norm(const Matrix& a);

// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
// Asymmetry beyond 1e-10 (relative to max |entry|) is a parameter error; a
// non-positive or non-finite pivot is a decomposition error carrying the
// 0-based index of the first failing pivot. No jitter is ever added here;
// callers that want a jitter retry opt in explicitly at their own layer.
Matrix cholesky(const Matrix& k);

// log det of a symmetric positive-definite matrix, via Cholesky.
double logdet_psd(const Matrix& k);

// Triangular solves: L x = b (forward) and L^T x = b (backward).
Matrix solve_lower(const Matrix& l, const Matrix& b);
Matrix solve_lower_transpose(const Matrix& l, const Matrix& b);

// x = k^{-1} b for symmetric positive-definite k.
Matrix solve_psd(const Matrix& k, const Matrix& b);
// Same, reusing a precomputed Cholesky factor of k.
Matrix solve_psd_with(const Matrix& l, const Matrix& b);

// Kronecker product a (x) b.
Matrix kron(const Matrix& a, const Matrix& b);

// Column-stacking vectorization and its inverse.
Matrix vec_col(const Matrix& a);
Matrix unvec_col(const Matrix& v, int rows, int cols);

}  // namespace blora
