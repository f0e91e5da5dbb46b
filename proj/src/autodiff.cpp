#include "nwbrl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "nwbrl/error.hpp"

namespace nwbrl::ad {

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Matrix value, const std::vector<Var>& parents, BackwardFn backward) {
  bool rg = false;
  for (const Var& p : parents) rg = rg || nodes_[p.id].requires_grad;
  nodes_.push_back(Node{std::move(value), Matrix(), rg, rg ? std::move(backward) : nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  require(root.tape == this, ErrorCode::InvalidArgument, "root belongs to another tape");
  const Matrix& rv = nodes_[root.id].value;
  require(rv.rows() == 1 && rv.cols() == 1, ErrorCode::NonScalarRoot,
          "backward requires a 1x1 root");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[root.id].grad = Matrix::Ones(1, 1);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    // The closure may append to grads of earlier nodes only; copy the grad so
    // the reference stays valid while it runs.
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

namespace {

void same_shape(Var a, Var b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::DimensionMismatch,
          std::string(op) + ": shape mismatch");
}

void same_tape(Var a, Var b) {
  require(a.tape == b.tape, ErrorCode::InvalidArgument, "operands live on different tapes");
}

// Reduces a broadcast gradient back to the shape of the row operand.
Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  return g.colwise().sum();
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  require(a.cols() == b.rows(), ErrorCode::DimensionMismatch, "matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.transpose());
  });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.accumulate(b, -g);
  });
}

Var add_row(Var a, Var row) {
  same_tape(a, row);
  const bool scalar = row.rows() == 1 && row.cols() == 1;
  require(row.rows() == 1 && (scalar || row.cols() == a.cols()), ErrorCode::DimensionMismatch,
          "add_row: operand must be 1 x cols or 1 x 1");
  Matrix out = a.value();
  if (scalar) {
    out.array() += row.value()(0, 0);
  } else {
    out.rowwise() += row.value().row(0);
  }
  return a.tape->push(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, reduce_to(g, row.rows(), row.cols()));
  });
}

Var mul_row(Var a, Var row) {
  same_tape(a, row);
  const bool scalar = row.rows() == 1 && row.cols() == 1;
  require(row.rows() == 1 && (scalar || row.cols() == a.cols()), ErrorCode::DimensionMismatch,
          "mul_row: operand must be 1 x cols or 1 x 1");
  Matrix out = a.value();
  if (scalar) {
    out *= row.value()(0, 0);
  } else {
    out.array().rowwise() *= row.value().row(0).array();
  }
  return a.tape->push(std::move(out), {a, row}, [a, row, scalar](Tape& t, const Matrix& g) {
    const Matrix& r = t.value(row);
    if (t.requires_grad(a)) {
      Matrix ga = g;
      if (scalar) {
        ga *= r(0, 0);
      } else {
        ga.array().rowwise() *= r.row(0).array();
      }
      t.accumulate(a, ga);
    }
    if (t.requires_grad(row)) {
      Matrix prod = g.cwiseProduct(t.value(a));
      t.accumulate(row, reduce_to(prod, r.rows(), r.cols()));
    }
  });
}

Var hadamard(Var a, Var b) {
  same_tape(a, b);
  same_shape(a, b, "hadamard");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

Var scale(Var a, double s) {
  Matrix out = s * a.value();
  return a.tape->push(std::move(out), {a},
                      [a, s](Tape& t, const Matrix& g) { t.accumulate(a, s * g); });
}

Var add_scalar(Var a, double s) {
  Matrix out = a.value().array() + s;
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix ga = (t.value(a).array() > 0.0).select(g, 0.0);
    t.accumulate(a, ga);
  });
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh();
  Tape* tp = a.tape;
  Var self{tp, static_cast<int>(tp->size())};
  return tp->push(std::move(out), {a}, [a, self](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(self);
    t.accumulate(a, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var exp(Var a) {
  Matrix out = a.value().array().exp();
  Tape* tp = a.tape;
  Var self{tp, static_cast<int>(tp->size())};
  return tp->push(std::move(out), {a}, [a, self](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(t.value(self)));
  });
}

Var square(Var a) {
  Matrix out = a.value().array().square();
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, 2.0 * g.cwiseProduct(t.value(a)));
  });
}

Var minimum(Var a, Var b) {
  same_tape(a, b);
  same_shape(a, b, "minimum");
  Matrix out = a.value().cwiseMin(b.value());
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    // Ties route to the first operand.
    auto pick_a = (t.value(a).array() <= t.value(b).array());
    if (t.requires_grad(a)) t.accumulate(a, pick_a.select(g, 0.0));
    if (t.requires_grad(b)) t.accumulate(b, pick_a.select(0.0, g));
  });
}

Var clamp(Var a, double lo, double hi) {
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape->push(std::move(out), {a}, [a, lo, hi](Tape& t, const Matrix& g) {
    const auto x = t.value(a).array();
    Matrix ga = ((x >= lo) && (x <= hi)).select(g, 0.0);
    t.accumulate(a, ga);
  });
}

Var layer_norm(Var a, double eps) {
  const Matrix& x = a.value();
  const Index n = x.rows();
  const Index d = x.cols();
  Matrix y(n, d);
  auto inv_std = std::make_shared<Vector>(n);
  for (Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(i) = is;
    y.row(i) = (x.row(i).array() - mu) * is;
  }
  Tape* tp = a.tape;
  Var self{tp, static_cast<int>(tp->size())};
  return tp->push(std::move(y), {a}, [a, self, inv_std](Tape& t, const Matrix& g) {
    const Matrix& yv = t.value(self);
    Matrix ga(g.rows(), g.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      const double gm = g.row(i).mean();
      const double gym = g.row(i).dot(yv.row(i)) / static_cast<double>(g.cols());
      ga.row(i) = (*inv_std)(i) * (g.row(i).array() - gm - yv.row(i).array() * gym);
    }
    t.accumulate(a, ga);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorCode::InvalidArgument, "concat_cols: no operands");
  const Index n = parts.front().rows();
  Index total = 0;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    require(p.rows() == n, ErrorCode::DimensionMismatch, "concat_cols: row counts differ");
    total += p.cols();
  }
  Matrix out(n, total);
  Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return parts.front().tape->push(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Index o = 0;
    for (const Var& p : parts) {
      const Index c = t.value(p).cols();
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(o, c));
      o += c;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorCode::InvalidArgument, "concat_rows: no operands");
  const Index c = parts.front().cols();
  Index total = 0;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    require(p.cols() == c, ErrorCode::DimensionMismatch, "concat_rows: column counts differ");
    total += p.rows();
  }
  Matrix out(total, c);
  Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return parts.front().tape->push(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Index o = 0;
    for (const Var& p : parts) {
      const Index r = t.value(p).rows();
      if (t.requires_grad(p)) t.accumulate(p, g.middleRows(o, r));
      o += r;
    }
  });
}

Var slice_rows(Var a, Index begin, Index count) {
  require(begin >= 0 && count >= 0 && begin + count <= a.rows(), ErrorCode::DimensionMismatch,
          "slice_rows: range out of bounds");
  Matrix out = a.value().middleRows(begin, count);
  return a.tape->push(std::move(out), {a}, [a, begin, count](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(a);
    Matrix ga = Matrix::Zero(x.rows(), x.cols());
    ga.middleRows(begin, count) = g;
    t.accumulate(a, ga);
  });
}

Var symmetrize(Var a) {
  require(a.rows() == a.cols(), ErrorCode::DimensionMismatch, "symmetrize: non-square");
  Matrix out = 0.5 * (a.value() + a.value().transpose());
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, 0.5 * (g + g.transpose()));
  });
}

Var row_sum(Var a) {
  Matrix out = a.value().rowwise().sum();
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(a);
    Matrix ga = g.col(0).replicate(1, x.cols());
    t.accumulate(a, ga);
  });
}

Var sum(Var a) {
  Matrix out = Matrix::Constant(1, 1, a.value().sum());
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(a);
    t.accumulate(a, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  require(n > 0, ErrorCode::EmptyInput, "mean of an empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var trace(Var a) {
  require(a.rows() == a.cols(), ErrorCode::DimensionMismatch, "trace of a non-square matrix");
  Matrix out = Matrix::Constant(1, 1, a.value().trace());
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    const Index n = t.value(a).rows();
    t.accumulate(a, g(0, 0) * Matrix::Identity(n, n));
  });
}

Var frob_sq(Var a) {
  Matrix out = Matrix::Constant(1, 1, a.value().squaredNorm());
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, 2.0 * g(0, 0) * t.value(a));
  });
}

Var logdet_pd(Var a, const linalg::JitterPolicy& policy) {
  auto factor = std::make_shared<linalg::CholeskyFactor>(linalg::cholesky(a.value(), policy));
  Matrix out = Matrix::Constant(1, 1, linalg::logdet_pd(*factor));
  return a.tape->push(std::move(out), {a}, [a, factor](Tape& t, const Matrix& g) {
    t.accumulate(a, g(0, 0) * linalg::inverse_pd(*factor));
  });
}

Var solve_pd(Var a, Var b, const linalg::JitterPolicy& policy) {
  same_tape(a, b);
  auto factor = std::make_shared<linalg::CholeskyFactor>(linalg::cholesky(a.value(), policy));
  Matrix x = linalg::solve_pd(*factor, b.value());
  Tape* tp = a.tape;
  Var self{tp, static_cast<int>(tp->size())};
  return tp->push(std::move(x), {a, b}, [a, b, self, factor](Tape& t, const Matrix& g) {
    Matrix gb = linalg::solve_pd(*factor, g);
    if (t.requires_grad(a)) t.accumulate(a, -gb * t.value(self).transpose());
    if (t.requires_grad(b)) t.accumulate(b, gb);
  });
}

double finite_diff_check(const std::function<ValueAndGrad(std::span<const double>)>& f,
                         std::span<const double> theta, double step) {
  std::vector<double> x(theta.begin(), theta.end());
  const ValueAndGrad base = f(x);
  require(base.grad.size() == x.size(), ErrorCode::DimensionMismatch,
          "finite_diff_check: gradient length differs from parameter length");
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x).value;
    x[i] = orig - step;
    const double fm = f(x).value;
    x[i] = orig;
    const double cd = (fp - fm) / (2.0 * step);
    worst = std::max(worst, std::abs(base.grad[i] - cd) / (std::abs(cd) + 1e-8));
  }
  return worst;
}

}  // namespace nwbrl::ad
