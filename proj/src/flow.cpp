// SPDX-License-Identifier: Apache-2.0
#include "blora/flow.hpp"

#include <cmath>

#include "blora/params.hpp"
#include "blora/rng.hpp"

namespace blora {

FlowStack::FlowStack(int dim, int depth) : dim_(dim), depth_(depth), hidden_(2 * dim) {
  if (dim < 1) throw ParameterError("flow dimension must be >= 1");
  if (depth < 0) throw ParameterError("flow depth must be >= 0");
  // Autoregressive masks over coordinate degrees 1..d: hidden unit j carries
  // degree m_j in 1..max(1, d-1); output i may only see degrees < i+1.
  mask1_ = Matrix(hidden_, dim_);
  mask2_ = Matrix(dim_, hidden_);
  const int span = std::max(1, dim_ - 1);
  for (int j = 0; j < hidden_; ++j) {
    const int mj = (j % span) + 1;
    for (int i = 0; i < dim_; ++i)
      if (i + 1 <= mj) mask1_(j, i) = 1.0;
    for (int i = 0; i < dim_; ++i)
      if (mj < i + 1) mask2_(i, j) = 1.0;
  }
}

std::string FlowStack::param_name(const std::string& prefix, int layer, const char* field) {
  return prefix + std::to_string(layer) + "." + field;
}

void FlowStack::init_params(ParamStore& store, const std::string& prefix,
                            RandomStream& rng) const {
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim_));
  for (int l = 0; l < depth_; ++l) {
    store.add(param_name(prefix, l, "w1"), sd * Matrix::randn(hidden_, dim_, rng));
    store.add(param_name(prefix, l, "b1"), Matrix::zeros(hidden_, 1));
    // Zero-initialized outputs make the fresh flow an identity map.
    store.add(param_name(prefix, l, "w2s"), Matrix::zeros(dim_, hidden_));
    store.add(param_name(prefix, l, "b2s"), Matrix::zeros(dim_, 1));
    store.add(param_name(prefix, l, "w2t"), Matrix::zeros(dim_, hidden_));
    store.add(param_name(prefix, l, "b2t"), Matrix::zeros(dim_, 1));
  }
}

FlowStack::Conditioner FlowStack::run_conditioner(const ParamStore& store,
                                                  const std::string& prefix, int layer,
                                                  const Matrix& z) const {
  const Matrix w1m = hadamard(store.at(param_name(prefix, layer, "w1")), mask1_);
  const Matrix h = tanh_elem(matmul(w1m, z) + store.at(param_name(prefix, layer, "b1")));
  const Matrix w2sm = hadamard(store.at(param_name(prefix, layer, "w2s")), mask2_);
  const Matrix w2tm = hadamard(store.at(param_name(prefix, layer, "w2t")), mask2_);
  Conditioner c;
  c.s = matmul(w2sm, h) + store.at(param_name(prefix, layer, "b2s"));
  c.t = matmul(w2tm, h) + store.at(param_name(prefix, layer, "b2t"));
  if (!c.s.is_finite() || !c.t.is_finite())
    throw NumericError("flow conditioner produced a non-finite output");
  return c;
}

static Matrix reversed(const Matrix& v) {
  Matrix r(v.rows(), 1);
  for (int i = 0; i < v.rows(); ++i) r(i, 0) = v(v.rows() - 1 - i, 0);
  return r;
}

std::pair<Matrix, double> FlowStack::forward_with_logdet(const ParamStore& store,
                                                         const std::string& prefix,
                                                         const Matrix& u0) const {
  if (static_cast<int>(u0.size()) != dim_)
    throw DimensionError("flow input size mismatch");
  Matrix z = u0.reshaped(dim_, 1);
  double logdet = 0.0;
  for (int l = 0; l < depth_; ++l) {
    if (l > 0) z = reversed(z);
    const Conditioner c = run_conditioner(store, prefix, l, z);
    for (int i = 0; i < dim_; ++i) {
      z(i, 0) = z(i, 0) * std::exp(c.s(i, 0)) + c.t(i, 0);
      logdet += c.s(i, 0);
    }
    if (!z.is_finite()) throw NumericError("flow forward produced a non-finite value");
  }
  return {z.reshaped(u0.rows(), u0.cols()), logdet};
}

std::pair<ad::Var, ad::Var> FlowStack::forward_on_tape(ad::Tape& t, const std::string& prefix,
                                                       ad::Var u0_vec) const {
  ad::Var z = u0_vec;
  ad::Var logdet = t.input(Matrix::zeros(1, 1));
  Matrix perm(dim_, dim_);
  for (int i = 0; i < dim_; ++i) perm(i, dim_ - 1 - i) = 1.0;
  for (int l = 0; l < depth_; ++l) {
    if (l > 0) z = t.matmul(t.input(perm), z);
    ad::Var w1m = t.mul(t.param_var(param_name(prefix, l, "w1")), t.input(mask1_));
    ad::Var h = t.tanh(t.add(t.matmul(w1m, z), t.param_var(param_name(prefix, l, "b1"))));
    ad::Var w2sm = t.mul(t.param_var(param_name(prefix, l, "w2s")), t.input(mask2_));
    ad::Var w2tm = t.mul(t.param_var(param_name(prefix, l, "w2t")), t.input(mask2_));
    ad::Var s = t.add(t.matmul(w2sm, h), t.param_var(param_name(prefix, l, "b2s")));
    ad::Var tt = t.add(t.matmul(w2tm, h), t.param_var(param_name(prefix, l, "b2t")));
    z = t.add(t.mul(z, t.exp(s)), tt);
    logdet = t.add(logdet, t.sum(s));
  }
  return {z, logdet};
}

Matrix FlowStack::inverse(const ParamStore& store, const std::string& prefix,
                          const Matrix& y_vec) const {
  if (y_vec.cols() != 1 || y_vec.rows() != dim_)
    throw DimensionError("flow inverse expects a d x 1 vector");
  Matrix y = y_vec;
  for (int l = depth_ - 1; l >= 0; --l) {
    Matrix z = Matrix::zeros(dim_, 1);
    for (int i = 0; i < dim_; ++i) {
      // Masking guarantees (s_i, t_i) only read z_{<i}, already recovered.
      const Conditioner c = run_conditioner(store, prefix, l, z);
      const double inv_scale = std::exp(-c.s(i, 0));
      if (!std::isfinite(inv_scale) || inv_scale == 0.0)
        throw NumericError("flow inversion scale underflow at coordinate " +
                           std::to_string(i));
      z(i, 0) = (y(i, 0) - c.t(i, 0)) * inv_scale;
    }
    y = (l > 0) ? reversed(z) : z;
  }
  return y;
}

double FlowStack::density_under_flow(const ParamStore& store, const std::string& prefix,
                                     const std::function<double(const Matrix&)>& base_logdensity,
                                     const Matrix& u_vec) const {
  if (u_vec.cols() != 1 || u_vec.rows() != dim_)
    throw DimensionError("density_under_flow expects a d x 1 vector");
  Matrix y = u_vec;
  double logdet = 0.0;
  for (int l = depth_ - 1; l >= 0; --l) {
    Matrix z = Matrix::zeros(dim_, 1);
    for (int i = 0; i < dim_; ++i) {
      const Conditioner c = run_conditioner(store, prefix, l, z);
      const double inv_scale = std::exp(-c.s(i, 0));
      if (!std::isfinite(inv_scale) || inv_scale == 0.0)
        throw NumericError("flow inversion scale underflow at coordinate " +
                           std::to_string(i));
      z(i, 0) = (y(i, 0) - c.t(i, 0)) * inv_scale;
    }
    // log|det J| of this layer, evaluated at its input.
    const Conditioner c = run_conditioner(store, prefix, l, z);
    logdet += sum(c.s);
    y = (l > 0) ? reversed(z) : z;
  }
  return base_logdensity(y) - logdet;
}

}  // namespace blora
