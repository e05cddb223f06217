#pragma once
/**
 * autodiff.hpp - a small reverse-mode gradient engine over dense matrices.
 *
 * Values live on a Tape as Eigen matrices; every operation records a node with
 * a closure that pushes the node's gradient to its inputs. Batches are stored
 * one sample per row, so a dense layer with an (out x in) weight matrix
 * reads H = X W^T + 1 b^T.
 *
 *   ad::Tape tape;
 *   auto w = tape.variable(W);
 *   auto loss = ad::sum(ad::square(ad::matmul_nt(tape.constant(X), w)));
 *   tape.backward(loss);
 *   tape.grad(w);   // dloss/dW
 *
 * Composite expressions (forward-mode tangents built from these ops, for
 * example) are differentiated like any other graph, which is how the flow's
 * Jacobian penalty gets its parameter gradient.
 */

#include <Eigen/Core>

#include <functional>
#include <vector>

namespace bimap::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  Var variable(Matrix value);
  Var constant(Matrix value);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() target; zero if v did not influence it.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Seeds d(target)/d(target) = 1 for a 1x1 target and runs the closures in
  /// reverse recording order.
  void backward(Var target);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  // Used by the op implementations.
  using Backward = std::function<void(Tape&, int)>;
  Var record(Matrix value, std::vector<int> inputs, Backward backward);
  Matrix& grad_ref(int id);
  const Matrix& value_at(int id) const { return nodes_[id].value; }
  bool requires_grad_at(int id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
/// a * b^T.
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equally shaped matrices.
Var mul(Var a, Var b);
/// scale * a + shift, elementwise.
Var affine(Var a, double scale, double shift = 0.0);
/// Adds the 1 x n row `b` to every row of `a`.
Var add_row(Var a, Var b);
Var tanh(Var a);
Var exp(Var a);
Var square(Var a);
/// |a| with subgradient 0 at 0.
Var abs(Var a);
/// Sum of all entries, 1x1.
Var sum(Var a);
/// Euclidean norm of every row, n x 1, with gradient 0 at a zero row.
Var row_norms(Var a);
/// Stacks `times` copies of `a` vertically.
Var tile_rows(Var a, int times);
/// Columns of `a` in the given order.
Var select_cols(Var a, const std::vector<int>& cols);
/// Horizontal concatenation.
Var hcat(Var a, Var b);

}  // namespace bimap::ad
