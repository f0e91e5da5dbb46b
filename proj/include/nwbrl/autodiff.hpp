#pragma once

#include <functional>
#include <span>
#include <vector>

#include "nwbrl/linalg.hpp"

namespace nwbrl::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

/// Records matrix-valued operations in construction (hence topological)
/// order. Single owner; not thread-safe.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  Var constant(Matrix value);
  Var leaf(Matrix value);

  /// Pushes a node computed from `parents`. `backward` receives the node's
  /// accumulated gradient and must call accumulate() on the parents.
  Var push(Matrix value, const std::vector<Var>& parents, BackwardFn backward);

  /// Reverse sweep from a 1x1 root. Clears previous gradients first, so two
  /// calls on the same tape give identical results.
  void backward(Var root);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last root w.r.t. v; a zero matrix if v was not reached.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  void accumulate(Var v, const Matrix& g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Differentiable operations. Shapes follow ordinary matrix algebra; the
// *_row variants broadcast a 1 x n row (or a 1 x 1 scalar) across rows.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var add_row(Var a, Var row);
Var mul_row(Var a, Var row);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var square(Var a);
Var minimum(Var a, Var b);
Var clamp(Var a, double lo, double hi);
/// Per-row standardization (x - mean) / sqrt(var + eps); no affine terms.
Var layer_norm(Var a, double eps);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, Index begin, Index count);
/// (A + A^T) / 2
Var symmetrize(Var a);
Var row_sum(Var a);
Var sum(Var a);
Var mean(Var a);
Var trace(Var a);
Var frob_sq(Var a);
/// log|A| for symmetric positive-definite A; adjoint A^{-1}.
Var logdet_pd(Var a, const linalg::JitterPolicy& policy = {});
/// A^{-1} B for symmetric positive-definite A.
Var solve_pd(Var a, Var b, const linalg::JitterPolicy& policy = {});

/// Value and flat gradient of a scalar function of a flat parameter vector.
struct ValueAndGrad {
  double value = 0.0;
  std::vector<double> grad;
};

/// Max over coordinates of |analytic - central difference| /
/// (|central difference| + 1e-8).
double finite_diff_check(const std::function<ValueAndGrad(std::span<const double>)>& f,
                         std::span<const double> theta, double step);

}  // namespace nwbrl::ad
