// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "blora/matrix.hpp"

namespace blora::ad {

class Tape;

// Handle into a tape. Cheap to copy; only valid for the tape that made it.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

// Reverse-mode automatic differentiation over matrix values.
//
// A tape records one computation (one training step builds one tape), then
// backward() visits the recorded operations exactly once in reverse order.
// Leaves registered through param() receive gradients; input() values are
// constants and never do.
class Tape {
 public:
  Var param(const std::string& name, const Matrix& value);
  Var input(Matrix value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double alpha);
  // Elementwise product; a 1x1 operand broadcasts against any shape.
  Var mul(Var a, Var b);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var reshape(Var a, int rows, int cols);
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  // Elementwise min(x, bound); gradient passes only where x < bound.
  Var clamp_max(Var a, double bound);
  // Sum of all entries, as a 1x1 value.
  Var sum(Var a);
  // Column-wise softmax (max-shifted).
  Var softmax_cols(Var a);
  // Total cross-entropy -sum_bk targets[k,b] * log softmax(logits)[k,b]
  // over all columns, as a 1x1 value. Targets are constants.
  Var softmax_xent_total(Var logits, const Matrix& targets);
  // x = k^{-1} b for symmetric positive-definite k. When jitter_retry is
  // set, a failed factorization is retried once with +1e-8 I (logged);
  // a second failure propagates.
  Var solve_psd(Var k, Var b, bool jitter_retry = false);
  Var logdet_psd(Var k, bool jitter_retry = false);

  const Matrix& value(Var v) const;

  // Runs the reverse sweep from a 1x1 output. May be called once per tape.
  void backward(Var out);

  // Gradient of a node after backward(); zeros if none was accumulated.
  Matrix grad(Var v) const;

  // backward() plus collection: one entry per registered parameter, zeros
  // for parameters the output does not depend on.
  std::map<std::string, Matrix> gradients(Var out);

  bool has_param(const std::string& name) const { return param_ids_.count(name) != 0; }
  Var param_var(const std::string& name) const;
  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op {
    kLeaf,
    kInput,
    kAdd,
    kSub,
    kScale,
    kMul,
    kMatMul,
    kTranspose,
    kReshape,
    kExp,
    kLog,
    kTanh,
    kClampMax,
    kSum,
    kSoftmaxCols,
    kSoftmaxXent,
    kSolvePsd,
    kLogDetPsd,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    double alpha = 0.0;
    bool requires_grad = false;
    Matrix value;
    Matrix cache;  // op-specific: softmax probabilities, Cholesky factor
  };

  int push(Node n);
  Var wrap(int id) { return Var{this, id}; }
  const Node& node(Var v) const;
  void check_mine(Var v) const;
  void accumulate(int id, const Matrix& g);

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
  std::map<std::string, int> param_ids_;
  std::vector<std::string> param_order_;
  bool backward_done_ = false;
};

// Composition helpers built from the primitives above.
Var softplus(Tape& t, Var x);         // log(1 + exp(x))
Var sigmoid(Tape& t, Var x);          // via tanh
Var mean(Tape& t, Var x);
Var diag_embed(Tape& t, Var v);       // n x 1 vector -> n x n diagonal matrix
Var dot_all(Tape& t, Var a, Var b);   // sum(a .* b)

}  // namespace blora::ad
