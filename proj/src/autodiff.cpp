#include "bimap/autodiff.hpp"

#include "vec_tanh.hpp"

#include <cassert>
#include <stdexcept>

namespace bimap::ad {

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::variable(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), true, nullptr});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), false, nullptr});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::record(Matrix value, std::vector<int> inputs, Backward backward) {
  bool needs = false;
  for (int i : inputs) needs = needs || nodes_[i].requires_grad;
  nodes_.push_back({std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var target) {
  if (nodes_[target.id].value.size() != 1) throw std::invalid_argument("backward target must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_ref(target.id).setOnes();
  for (int i = target.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, i);
  }
}

namespace {

// Pushes `g` into input `id` if it takes part in differentiation.
template <class Expr>
void accumulate(Tape& t, int id, const Expr& g) {
  if (t.requires_grad_at(id)) t.grad_ref(id) += g;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(a.value() * b.value(), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.grad_ref(self);
    if (t.requires_grad_at(a)) t.grad_ref(a).noalias() += g * t.value_at(b).transpose();
    if (t.requires_grad_at(b)) t.grad_ref(b).noalias() += t.value_at(a).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(a.value() * b.value().transpose(), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.grad_ref(self);
    if (t.requires_grad_at(a)) t.grad_ref(a).noalias() += g * t.value_at(b);
    if (t.requires_grad_at(b)) t.grad_ref(b).noalias() += g.transpose() * t.value_at(a);
  });
}

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(a.value() + b.value(), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.grad_ref(self);
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(a.value() - b.value(), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.grad_ref(self);
    accumulate(t, a, g);
    accumulate(t, b, -g);
  });
}

Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(a.value().cwiseProduct(b.value()), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.grad_ref(self);
    accumulate(t, a, g.cwiseProduct(t.value_at(b)));
    accumulate(t, b, g.cwiseProduct(t.value_at(a)));
  });
}

Var affine(Var a, double scale, double shift) {
  Tape& t = *a.tape;
  Matrix v = (scale * a.value().array() + shift).matrix();
  return t.record(std::move(v), {a.id}, [a = a.id, scale](Tape& t, int self) {
    accumulate(t, a, scale * t.grad_ref(self));
  });
}

Var add_row(Var a, Var b) {
  Tape& t = *a.tape;
  assert(b.rows() == 1 && b.cols() == a.cols());
  Matrix v = a.value().rowwise() + b.value().row(0);
  return t.record(std::move(v), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.grad_ref(self);
    accumulate(t, a, g);
    accumulate(t, b, g.colwise().sum());
  });
}

Var tanh(Var a) {
  Tape& t = *a.tape;
  Matrix v = vec_tanh(a.value().array()).matrix();
  return t.record(std::move(v), {a.id}, [a = a.id](Tape& t, int self) {
    const Matrix& h = t.value_at(self);
    accumulate(t, a, (t.grad_ref(self).array() * (1.0 - h.array().square())).matrix());
  });
}

Var exp(Var a) {
  Tape& t = *a.tape;
  Matrix v = a.value().array().exp().matrix();
  return t.record(std::move(v), {a.id}, [a = a.id](Tape& t, int self) {
    accumulate(t, a, t.grad_ref(self).cwiseProduct(t.value_at(self)));
  });
}

Var square(Var a) {
  Tape& t = *a.tape;
  Matrix v = a.value().array().square().matrix();
  return t.record(std::move(v), {a.id}, [a = a.id](Tape& t, int self) {
    accumulate(t, a, 2.0 * t.grad_ref(self).cwiseProduct(t.value_at(a)));
  });
}

Var abs(Var a) {
  Tape& t = *a.tape;
  Matrix v = a.value().cwiseAbs();
  return t.record(std::move(v), {a.id}, [a = a.id](Tape& t, int self) {
    const Matrix sign = t.value_at(a).unaryExpr([](double x) { return double((x > 0.0) - (x < 0.0)); });
    accumulate(t, a, t.grad_ref(self).cwiseProduct(sign));
  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return t.record(std::move(v), {a.id}, [a = a.id](Tape& t, int self) {
    const double g = t.grad_ref(self)(0, 0);
    if (t.requires_grad_at(a)) t.grad_ref(a).array() += g;
  });
}

Var row_norms(Var a) {
  Tape& t = *a.tape;
  Matrix v = a.value().rowwise().norm();
  return t.record(std::move(v), {a.id}, [a = a.id](Tape& t, int self) {
    if (!t.requires_grad_at(a)) return;
    const Matrix& x = t.value_at(a);
    const Matrix& n = t.value_at(self);
    const Matrix& g = t.grad_ref(self);
    Matrix& ga = t.grad_ref(a);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      if (n(r, 0) > 0.0) ga.row(r) += (g(r, 0) / n(r, 0)) * x.row(r);
    }
  });
}

Var tile_rows(Var a, int times) {
  Tape& t = *a.tape;
  Matrix v = a.value().replicate(times, 1);
  return t.record(std::move(v), {a.id}, [a = a.id, times](Tape& t, int self) {
    if (!t.requires_grad_at(a)) return;
    const Matrix& g = t.grad_ref(self);
    Matrix& ga = t.grad_ref(a);
    const Eigen::Index n = ga.rows();
    for (int k = 0; k < times; ++k) ga += g.middleRows(k * n, n);
  });
}

Var select_cols(Var a, const std::vector<int>& cols) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  Matrix v(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) v.col(c) = x.col(cols[c]);
  return t.record(std::move(v), {a.id}, [a = a.id, cols](Tape& t, int self) {
    if (!t.requires_grad_at(a)) return;
    const Matrix& g = t.grad_ref(self);
    Matrix& ga = t.grad_ref(a);
    for (std::size_t c = 0; c < cols.size(); ++c) ga.col(cols[c]) += g.col(c);
  });
}

Var hcat(Var a, Var b) {
  Tape& t = *a.tape;
  assert(a.rows() == b.rows());
  Matrix v(a.rows(), a.cols() + b.cols());
  v << a.value(), b.value();
  return t.record(std::move(v), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.grad_ref(self);
    const Eigen::Index na = t.value_at(a).cols();
    accumulate(t, a, g.leftCols(na));
    accumulate(t, b, g.rightCols(g.cols() - na));
  });
}

}  // namespace bimap::ad
