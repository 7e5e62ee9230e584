// SPDX-License-Identifier: Apache-2.0
#include "blora/tape.hpp"

#include <cmath>

#include "blora/log.hpp"

namespace blora::ad {

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check_mine(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw UsageError("variable does not belong to this tape");
}

const Tape::Node& Tape::node(Var v) const {
  check_mine(v);
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

Var Tape::param(const std::string& name, const Matrix& value) {
  if (param_ids_.count(name)) throw UsageError("parameter already on tape: " + name);
  Node n;
  n.op = Op::kLeaf;
  n.value = value;
  n.requires_grad = true;
  const int id = push(std::move(n));
  param_ids_.emplace(name, id);
  param_order_.push_back(name);
  return wrap(id);
}

Var Tape::input(Matrix value) {
  Node n;
  n.op = Op::kInput;
  n.value = std::move(value);
  n.requires_grad = false;
  return wrap(push(std::move(n)));
}

Var Tape::param_var(const std::string& name) const {
  auto it = param_ids_.find(name);
  if (it == param_ids_.end()) throw UsageError("parameter not on tape: " + name);
  return Var{const_cast<Tape*>(this), it->second};
}

Var Tape::add(Var a, Var b) {
  const Node &na = node(a), &nb = node(b);
  Node n;
  n.op = Op::kAdd;
  n.a = a.id;
  n.b = b.id;
  n.value = na.value + nb.value;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return wrap(push(std::move(n)));
}

Var Tape::sub(Var a, Var b) {
  const Node &na = node(a), &nb = node(b);
  Node n;
  n.op = Op::kSub;
  n.a = a.id;
  n.b = b.id;
  n.value = na.value - nb.value;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return wrap(push(std::move(n)));
}

Var Tape::scale(Var a, double alpha) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kScale;
  n.a = a.id;
  n.alpha = alpha;
  n.value = alpha * na.value;
  n.requires_grad = na.requires_grad;
  return wrap(push(std::move(n)));
}

static bool is_scalar_shape(const Matrix& m) { return m.rows() == 1 && m.cols() == 1; }

Var Tape::mul(Var a, Var b) {
  const Node &na = node(a), &nb = node(b);
  Node n;
  n.op = Op::kMul;
  n.a = a.id;
  n.b = b.id;
  if (na.value.same_shape(nb.value)) {
    n.value = hadamard(na.value, nb.value);
  } else if (is_scalar_shape(na.value)) {
    n.value = na.value.at(0) * nb.value;
  } else if (is_scalar_shape(nb.value)) {
    n.value = nb.value.at(0) * na.value;
  } else {
    throw DimensionError("mul: shapes neither equal nor scalar-broadcastable");
  }
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return wrap(push(std::move(n)));
}

Var Tape::matmul(Var a, Var b) {
  const Node &na = node(a), &nb = node(b);
  Node n;
  n.op = Op::kMatMul;
  n.a = a.id;
  n.b = b.id;
  n.value = blora::matmul(na.value, nb.value);
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return wrap(push(std::move(n)));
}

Var Tape::transpose(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kTranspose;
  n.a = a.id;
  n.value = blora::transpose(na.value);
  n.requires_grad = na.requires_grad;
  return wrap(push(std::move(n)));
}

Var Tape::reshape(Var a, int rows, int cols) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kReshape;
  n.a = a.id;
  n.value = na.value.reshaped(rows, cols);
  n.requires_grad = na.requires_grad;
  return wrap(push(std::move(n)));
}

Var Tape::exp(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kExp;
  n.a = a.id;
  n.value = exp_elem(na.value);
  n.requires_grad = na.requires_grad;
  return wrap(push(std::move(n)));
}

Var Tape::log(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kLog;
  n.a = a.id;
  n.value = log_elem(na.value);
  n.requires_grad = na.requires_grad;
  return wrap(push(std::move(n)));
}

Var Tape::tanh(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kTanh;
  n.a = a.id;
  n.value = tanh_elem(na.value);
  n.requires_grad = na.requires_grad;
  return wrap(push(std::move(n)));
}

Var Tape::clamp_max(Var a, double bound) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kClampMax;
  n.a = a.id;
  n.alpha = bound;
  n.value = na.value;
  for (std::size_t i = 0; i < n.value.size(); ++i)
    if (n.value.at(i) > bound) n.value.at(i) = bound;
  n.requires_grad = na.requires_grad;
  return wrap(push(std::move(n)));
}

Var Tape::sum(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kSum;
  n.a = a.id;
  n.value = Matrix(1, 1);
  n.value.at(0) = blora::sum(na.value);
  n.requires_grad = na.requires_grad;
  return wrap(push(std::move(n)));
}

static Matrix softmax_columns(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (int c = 0; c < z.cols(); ++c) {
    double zmax = z(0, c);
    for (int i = 1; i < z.rows(); ++i) zmax = std::max(zmax, z(i, c));
    double total = 0.0;
    for (int i = 0; i < z.rows(); ++i) {
      const double e = std::exp(z(i, c) - zmax);
      p(i, c) = e;
      total += e;
    }
    for (int i = 0; i < z.rows(); ++i) p(i, c) /= total;
  }
  return p;
}

Var Tape::softmax_cols(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kSoftmaxCols;
  n.a = a.id;
  n.value = softmax_columns(na.value);
  n.requires_grad = na.requires_grad;
  return wrap(push(std::move(n)));
}

Var Tape::softmax_xent_total(Var logits, const Matrix& targets) {
  if (!node(logits).value.same_shape(targets))
    throw DimensionError("softmax_xent_total: logits/targets shape mismatch");
  // Targets ride along as a constant input so backward can reach them.
  // Pushed first: push may reallocate node storage, so references into the
  // node vector are only taken afterwards.
  Var tv = input(targets);
  const Node& nl = node(logits);
  Node n;
  n.op = Op::kSoftmaxXent;
  n.a = logits.id;
  const Matrix& z = nl.value;
  n.cache = softmax_columns(z);
  n.b = tv.id;
  double total = 0.0;
  for (int c = 0; c < z.cols(); ++c) {
    double zmax = z(0, c);
    for (int i = 1; i < z.rows(); ++i) zmax = std::max(zmax, z(i, c));
    double lse = 0.0;
    for (int i = 0; i < z.rows(); ++i) lse += std::exp(z(i, c) - zmax);
    lse = std::log(lse) + zmax;
    for (int i = 0; i < z.rows(); ++i)
      total -= targets(i, c) * (z(i, c) - lse);
  }
  n.value = Matrix(1, 1);
  n.value.at(0) = total;
  n.requires_grad = nl.requires_grad;
  return wrap(push(std::move(n)));
}

static Matrix factor_with_policy(const Matrix& k, bool jitter_retry) {
  if (!jitter_retry) return cholesky(k);
  try {
    return cholesky(k);
  } catch (const DecompositionError& e) {
    log_warning(std::string("cholesky failed (") + e.what() + "), retrying with 1e-8 jitter");
    Matrix kj = k;
    for (int i = 0; i < k.rows(); ++i) kj(i, i) += 1e-8;
    return cholesky(kj);
  }
}

Var Tape::solve_psd(Var k, Var b, bool jitter_retry) {
  const Node &nk = node(k), &nb = node(b);
  Node n;
  n.op = Op::kSolvePsd;
  n.a = k.id;
  n.b = b.id;
  n.cache = factor_with_policy(nk.value, jitter_retry);
  n.value = solve_psd_with(n.cache, nb.value);
  n.requires_grad = nk.requires_grad || nb.requires_grad;
  return wrap(push(std::move(n)));
}

Var Tape::logdet_psd(Var k, bool jitter_retry) {
  const Node& nk = node(k);
  Node n;
  n.op = Op::kLogDetPsd;
  n.a = k.id;
  n.cache = factor_with_policy(nk.value, jitter_retry);
  double ld = 0.0;
  for (int i = 0; i < n.cache.rows(); ++i) ld += std::log(n.cache(i, i));
  n.value = Matrix(1, 1);
  n.value.at(0) = 2.0 * ld;
  n.requires_grad = nk.requires_grad;
  return wrap(push(std::move(n)));
}

void Tape::accumulate(int id, const Matrix& g) {
  if (id < 0) return;
  if (!nodes_[static_cast<std::size_t>(id)].requires_grad) return;
  Matrix& slot = grads_[static_cast<std::size_t>(id)];
  if (slot.empty())
    slot = g;
  else
    slot += g;
}

void Tape::backward(Var out) {
  check_mine(out);
  if (backward_done_) throw UsageError("backward already run on this tape");
  const Node& no = nodes_[static_cast<std::size_t>(out.id)];
  if (no.value.rows() != 1 || no.value.cols() != 1)
    throw UsageError("backward requires a 1x1 output");
  if (!no.requires_grad)
    throw UsageError("output does not depend on any parameter");
  backward_done_ = true;
  grads_[static_cast<std::size_t>(out.id)] = Matrix::constant(1, 1, 1.0);

  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Matrix& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty() || !n.requires_grad) continue;
    switch (n.op) {
      case Op::kLeaf:
      case Op::kInput:
        break;
      case Op::kAdd:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::kSub:
        accumulate(n.a, g);
        accumulate(n.b, -1.0 * g);
        break;
      case Op::kScale:
        accumulate(n.a, n.alpha * g);
        break;
      case Op::kMul: {
        const Matrix& va = nodes_[static_cast<std::size_t>(n.a)].value;
        const Matrix& vb = nodes_[static_cast<std::size_t>(n.b)].value;
        if (va.same_shape(vb)) {
          accumulate(n.a, hadamard(g, vb));
          accumulate(n.b, hadamard(g, va));
        } else if (is_scalar_shape(va)) {
          accumulate(n.a, Matrix::constant(1, 1, dot(g, vb)));
          accumulate(n.b, va.at(0) * g);
        } else {
          accumulate(n.a, vb.at(0) * g);
          accumulate(n.b, Matrix::constant(1, 1, dot(g, va)));
        }
        break;
      }
      case Op::kMatMul: {
        const Matrix& va = nodes_[static_cast<std::size_t>(n.a)].value;
        const Matrix& vb = nodes_[static_cast<std::size_t>(n.b)].value;
        accumulate(n.a, blora::matmul(g, blora::transpose(vb)));
        accumulate(n.b, blora::matmul(blora::transpose(va), g));
        break;
      }
      case Op::kTranspose:
        accumulate(n.a, blora::transpose(g));
        break;
      case Op::kReshape: {
        const Matrix& va = nodes_[static_cast<std::size_t>(n.a)].value;
        accumulate(n.a, g.reshaped(va.rows(), va.cols()));
        break;
      }
      case Op::kExp:
        accumulate(n.a, hadamard(g, n.value));
        break;
      case Op::kLog: {
        const Matrix& va = nodes_[static_cast<std::size_t>(n.a)].value;
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) gx.at(i) = g.at(i) / va.at(i);
        accumulate(n.a, gx);
        break;
      }
      case Op::kTanh: {
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i)
          gx.at(i) = g.at(i) * (1.0 - n.value.at(i) * n.value.at(i));
        accumulate(n.a, gx);
        break;
      }
      case Op::kClampMax: {
        const Matrix& va = nodes_[static_cast<std::size_t>(n.a)].value;
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i)
          gx.at(i) = va.at(i) < n.alpha ? g.at(i) : 0.0;
        accumulate(n.a, gx);
        break;
      }
      case Op::kSum: {
        const Matrix& va = nodes_[static_cast<std::size_t>(n.a)].value;
        accumulate(n.a, Matrix::constant(va.rows(), va.cols(), g.at(0)));
        break;
      }
      case Op::kSoftmaxCols: {
        const Matrix& p = n.value;
        Matrix gx(p.rows(), p.cols());
        for (int c = 0; c < p.cols(); ++c) {
          double inner = 0.0;
          for (int i = 0; i < p.rows(); ++i) inner += p(i, c) * g(i, c);
          for (int i = 0; i < p.rows(); ++i) gx(i, c) = p(i, c) * (g(i, c) - inner);
        }
        accumulate(n.a, gx);
        break;
      }
      case Op::kSoftmaxXent: {
        const Matrix& t = nodes_[static_cast<std::size_t>(n.b)].value;
        accumulate(n.a, g.at(0) * (n.cache - t));
        break;
      }
      case Op::kSolvePsd: {
        // X = K^{-1} B:  dB = K^{-1} dX,  dK = -K^{-1} dX X^T.
        const Matrix s = solve_psd_with(n.cache, g);
        accumulate(n.b, s);
        accumulate(n.a, -1.0 * blora::matmul(s, blora::transpose(n.value)));
        break;
      }
      case Op::kLogDetPsd: {
        const Matrix kinv = solve_psd_with(n.cache, Matrix::identity(n.cache.rows()));
        accumulate(n.a, g.at(0) * kinv);
        break;
      }
    }
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  const Matrix& g = grads_[static_cast<std::size_t>(v.id)];
  if (g.empty()) return Matrix::zeros(n.value.rows(), n.value.cols());
  return g;
}

std::map<std::string, Matrix> Tape::gradients(Var out) {
  backward(out);
  std::map<std::string, Matrix> result;
  for (const auto& name : param_order_)
    result.emplace(name, grad(Var{this, param_ids_.at(name)}));
  return result;
}

Var softplus(Tape& t, Var x) {
  const Matrix& v = t.value(x);
  Var one = t.input(Matrix::constant(v.rows(), v.cols(), 1.0));
  return t.log(t.add(one, t.exp(x)));
}

Var sigmoid(Tape& t, Var x) {
  const Matrix& v = t.value(x);
  Var one = t.input(Matrix::constant(v.rows(), v.cols(), 1.0));
  return t.scale(t.add(one, t.tanh(t.scale(x, 0.5))), 0.5);
}

Var mean(Tape& t, Var x) {
  const Matrix& v = t.value(x);
  return t.scale(t.sum(x), 1.0 / static_cast<double>(v.size()));
}

Var diag_embed(Tape& t, Var v) {
  const Matrix& val = t.value(v);
  if (val.cols() != 1) throw DimensionError("diag_embed expects a column vector");
  const int n = val.rows();
  Var ones_row = t.input(Matrix::constant(1, n, 1.0));
  Var outer = t.matmul(v, ones_row);
  Var eye = t.input(Matrix::identity(n));
  return t.mul(outer, eye);
}

Var dot_all(Tape& t, Var a, Var b) { return t.sum(t.mul(a, b)); }

}  // namespace blora::ad
