// SPDX-License-Identifier: Apache-2.0
#include "blora/matrix.hpp"

#include <cmath>
#include <string>

#include "blora/kernels.hpp"
#include "blora/rng.hpp"

namespace blora {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = static_cast<int>(rows.size());
  cols_ = rows_ ? static_cast<int>(rows.begin()->size()) : 0;
  a_.reserve(static_cast<std::size_t>(rows_) * cols_);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != cols_) throw DimensionError("ragged initializer");
    a_.insert(a_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::constant(int r, int c, double v) {
  Matrix m(r, c);
  for (auto& x : m.a_) x = v;
  return m;
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diag(const std::vector<double>& d) {
  Matrix m(static_cast<int>(d.size()), static_cast<int>(d.size()));
  for (int i = 0; i < m.rows_; ++i) m(i, i) = d[static_cast<std::size_t>(i)];
  return m;
}

Matrix Matrix::randn(int r, int c, RandomStream& rng) {
  Matrix m(r, c);
  for (auto& x : m.a_) x = rng.normal();
  return m;
}

Matrix Matrix::column(const std::vector<double>& v) {
  Matrix m(static_cast<int>(v.size()), 1);
  m.a_ = v;
  return m;
}

Matrix Matrix::reshaped(int r, int c) const {
  if (static_cast<std::size_t>(r) * c != a_.size())
    throw DimensionError("reshape size mismatch");
  Matrix m = *this;
  m.rows_ = r;
  m.cols_ = c;
  return m;
}

Matrix Matrix::col(int j) const {
  Matrix v(rows_, 1);
  for (int i = 0; i < rows_; ++i) v(i, 0) = (*this)(i, j);
  return v;
}

Matrix Matrix::row(int i) const {
  Matrix v(1, cols_);
  for (int j = 0; j < cols_; ++j) v(0, j) = (*this)(i, j);
  return v;
}

void Matrix::set_col(int j, const Matrix& v) {
  for (int i = 0; i < rows_; ++i) (*this)(i, j) = v(i, 0);
}

bool Matrix::is_finite() const {
  for (double x : a_)
    if (!std::isfinite(x)) return false;
  return true;
}

static void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                         "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                         "x" + std::to_string(b.cols()));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()));
  Matrix c(a.rows(), b.cols());
  kern::active().matmul(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c(a.rows(), a.cols());
  kern::active().add(a.data(), b.data(), c.data(), a.size());
  return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix c(a.rows(), a.cols());
  kern::active().sub(a.data(), b.data(), c.data(), a.size());
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix c(a.rows(), a.cols());
  kern::active().mul(a.data(), b.data(), c.data(), a.size());
  return c;
}

Matrix operator*(double alpha, const Matrix& a) {
  Matrix c(a.rows(), a.cols());
  kern::active().scale(a.data(), alpha, c.data(), a.size());
  return c;
}

Matrix& operator+=(Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  kern::active().add(a.data(), b.data(), a.data(), a.size());
  return a;
}

void axpy(double alpha, const Matrix& x, Matrix& y) {
  require_same_shape(x, y, "axpy");
  kern::active().axpy(alpha, x.data(), y.data(), x.size());
}

Matrix exp_elem(const Matrix& a) {
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.at(i) = std::exp(a.at(i));
  if (!c.is_finite()) throw NumericError("exp overflow");
  return c;
}

Matrix log_elem(const Matrix& a) {
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a.at(i) > 0.0)) throw NumericError("log of non-positive entry");
    c.at(i) = std::log(a.at(i));
  }
  return c;
}

Matrix tanh_elem(const Matrix& a) {
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.at(i) = std::tanh(a.at(i));
  return c;
}

double sum(const Matrix& a) { return kern::active().sum(a.data(), a.size()); }

double dot(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "dot");
  return kern::active().dot(a.data(), b.data(), a.size());
}

double trace(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("trace of non-square matrix");
  double t = 0.0;
  for (int i = 0; i < a.rows(); ++i) t += a(i, i);
  return t;
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.at(i)));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.at(i) - b.at(i)));
  return m;
}

double fro_norm(const Matrix& a) {
  return std::sqrt(kern::active().dot(a.data(), a.data(), a.size()));
}

Matrix cholesky(const Matrix& k) {
  const int n = k.rows();
  if (n != k.cols()) throw DimensionError("cholesky of non-square matrix");
  double asym = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) asym = std::max(asym, std::fabs(k(i, j) - k(j, i)));
  if (asym > 1e-10 * std::max(1.0, max_abs(k)))
    throw ParameterError("cholesky input not symmetric");

  Matrix l(n, n);
  for (int j = 0; j < n; ++j) {
    double d = k(j, j);
    for (int p = 0; p < j; ++p) d -= l(j, p) * l(j, p);
    if (!(d > 0.0) || !std::isfinite(d))
      throw DecompositionError("matrix not positive definite", j);
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (int i = j + 1; i < n; ++i) {
      double s = k(i, j);
      for (int p = 0; p < j; ++p) s -= l(i, p) * l(j, p);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

double logdet_psd(const Matrix& k) {
  const Matrix l = cholesky(k);
  double ld = 0.0;
  for (int i = 0; i < k.rows(); ++i) ld += std::log(l(i, i));
  return 2.0 * ld;
}

Matrix solve_lower(const Matrix& l, const Matrix& b) {
  const int n = l.rows();
  if (l.cols() != n) throw DimensionError("solve_lower: factor not square");
  if (b.rows() != n) throw DimensionError("solve_lower: rhs rows mismatch");
  Matrix x = b;
  for (int c = 0; c < b.cols(); ++c) {
    for (int i = 0; i < n; ++i) {
      double s = x(i, c);
      for (int p = 0; p < i; ++p) s -= l(i, p) * x(p, c);
      x(i, c) = s / l(i, i);
    }
  }
  return x;
}

Matrix solve_lower_transpose(const Matrix& l, const Matrix& b) {
  const int n = l.rows();
  if (l.cols() != n) throw DimensionError("solve_lower_transpose: factor not square");
  if (b.rows() != n) throw DimensionError("solve_lower_transpose: rhs rows mismatch");
  Matrix x = b;
  for (int c = 0; c < b.cols(); ++c) {
    for (int i = n - 1; i >= 0; --i) {
      double s = x(i, c);
      for (int p = i + 1; p < n; ++p) s -= l(p, i) * x(p, c);
      x(i, c) = s / l(i, i);
    }
  }
  return x;
}

Matrix solve_psd(const Matrix& k, const Matrix& b) {
  return solve_psd_with(cholesky(k), b);
}

Matrix solve_psd_with(const Matrix& l, const Matrix& b) {
  return solve_lower_transpose(l, solve_lower(l, b));
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) {
      const double aij = a(i, j);
      for (int p = 0; p < b.rows(); ++p)
        for (int q = 0; q < b.cols(); ++q)
          c(i * b.rows() + p, j * b.cols() + q) = aij * b(p, q);
    }
  return c;
}

Matrix vec_col(const Matrix& a) {
  Matrix v(a.rows() * a.cols(), 1);
  std::size_t k = 0;
  for (int j = 0; j < a.cols(); ++j)
    for (int i = 0; i < a.rows(); ++i) v.at(k++) = a(i, j);
  return v;
}

Matrix unvec_col(const Matrix& v, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * cols != v.size())
    throw DimensionError("unvec size mismatch");
  Matrix a(rows, cols);
  std::size_t k = 0;
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) a(i, j) = v.at(k++);
  return a;
}

}  // namespace blora
