// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <utility>

#include "blora/matrix.hpp"
#include "blora/tape.hpp"

namespace blora {

class RandomStream;
class ParamStore;

// Stack of L affine autoregressive layers over the row-major flattening of
// the inducing matrix, with coordinate-order reversal between layers.
//
// Each layer transforms y_i = z_i * exp(s_i(z_{<i})) + t_i(z_{<i}) where the
// conditioner (s, t) is a single-hidden-layer masked network (hidden width
// 2d, tanh). The final conditioner layer starts at zero, so a fresh flow is
// the identity. This orientation makes sampling a single pass; densities pay
// a coordinate-sequential inversion instead.
//
// The stack holds structure only (dims, masks); parameters live in a
// ParamStore under "<prefix><layer>.{w1,b1,w2s,b2s,w2t,b2t}".
class FlowStack {
 public:
  FlowStack(int dim, int depth);

  int dim() const { return dim_; }
  int depth() const { return depth_; }

  // Registers freshly initialized parameters for every layer.
  void init_params(ParamStore& store, const std::string& prefix, RandomStream& rng) const;

  // Sampling direction on values: u0 flattened row-major, transformed, and
  // reshaped back to u0's shape. Returns the transform and log|det J|.
  std::pair<Matrix, double> forward_with_logdet(const ParamStore& store,
                                                const std::string& prefix,
                                                const Matrix& u0) const;

  // Sampling direction on a tape; u0_vec is d x 1 and parameters must
  // already be registered on the tape under the same names.
  std::pair<ad::Var, ad::Var> forward_on_tape(ad::Tape& t, const std::string& prefix,
                                              ad::Var u0_vec) const;

  // Inverse transform (coordinate-sequential), d x 1 in and out.
  Matrix inverse(const ParamStore& store, const std::string& prefix,
                 const Matrix& y_vec) const;

  // log q(u) = base_logdensity(inverse(u)) - log|det J| at the inverse.
  double density_under_flow(const ParamStore& store, const std::string& prefix,
                            const std::function<double(const Matrix&)>& base_logdensity,
                            const Matrix& u_vec) const;

  static std::string param_name(const std::string& prefix, int layer, const char* field);

 private:
  struct Conditioner {
    Matrix s;  // d x 1 log-scales
    Matrix t;  // d x 1 shifts
  };
  Conditioner run_conditioner(const ParamStore& store, const std::string& prefix,
                              int layer, const Matrix& z) const;

  int dim_;
  int depth_;
  int hidden_;
  Matrix mask1_;  // hidden x dim
  Matrix mask2_;  // dim x hidden
};

}  // namespace blora
