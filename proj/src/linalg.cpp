#include "nwbrl/linalg.hpp"

#include <cmath>
#include <sstream>

#include "nwbrl/error.hpp"

namespace nwbrl {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::InvalidDof: return "InvalidDof";
    case ErrorCode::DegenerateDenominator: return "DegenerateDenominator";
    case ErrorCode::NonScalarRoot: return "NonScalarRoot";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EpisodeExhausted: return "EpisodeExhausted";
    case ErrorCode::NotOracleFamily: return "NotOracleFamily";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

namespace linalg {
namespace {

thread_local std::uint64_t g_cholesky_calls = 0;

// Plain Cholesky–Banachiewicz on a row-major matrix. Returns false on a
// non-positive pivot.
bool factorize(const Matrix& a, double jitter, Matrix& l) {
  const Index n = a.rows();
  l.setZero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j <= i; ++j) {
      double s = a(i, j);
      if (i == j) s += jitter;
      s -= l.row(i).head(j).dot(l.row(j).head(j));
      if (i == j) {
        if (!(s > 0.0) || !std::isfinite(s)) return false;
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return true;
}

}  // namespace

std::uint64_t cholesky_call_count() { return g_cholesky_calls; }

bool is_symmetric(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol;
}

bool all_finite(const Matrix& a) { return a.allFinite(); }

void symmetrize(Matrix& x) {
  Matrix t = x.transpose();
  x = 0.5 * (x + t);
}

CholeskyFactor cholesky(const Matrix& a, const JitterPolicy& policy) {
  ++g_cholesky_calls;
  require(a.rows() == a.cols() && a.rows() >= 1, ErrorCode::DimensionMismatch,
          "cholesky requires a non-empty square matrix");
  require(a.allFinite(), ErrorCode::NotPositiveDefinite, "cholesky input has non-finite entries");
  require(is_symmetric(a, policy.symmetry_tol), ErrorCode::InvalidArgument,
          "cholesky input is not symmetric");
  CholeskyFactor f;
  if (factorize(a, 0.0, f.L)) return f;
  for (double j : policy.ladder) {
    if (factorize(a, j, f.L)) {
      f.jitter = j;
      return f;
    }
  }
  std::ostringstream msg;
  msg << "factorization failed at maximum jitter for a " << a.rows() << "x" << a.cols()
      << " matrix";
  throw Error(ErrorCode::NotPositiveDefinite, msg.str());
}

double logdet_pd(const CholeskyFactor& f) {
  return 2.0 * f.L.diagonal().array().log().sum();
}

Matrix solve_pd(const CholeskyFactor& f, const Matrix& b) {
  require(f.dim() == b.rows(), ErrorCode::DimensionMismatch,
          "solve_pd: factor dimension does not match right-hand side rows");
  Matrix x = f.L.triangularView<Eigen::Lower>().solve(b);
  f.L.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
  return x;
}

Matrix inverse_pd(const CholeskyFactor& f) {
  Matrix x = solve_pd(f, Matrix::Identity(f.dim(), f.dim()));
  symmetrize(x);
  return x;
}

Matrix sym_rank_update(const Matrix& a, const RowVector& v, int sign) {
  require(a.rows() == a.cols() && a.cols() == v.size(), ErrorCode::DimensionMismatch,
          "sym_rank_update: dimension mismatch");
  require(sign == 1 || sign == -1, ErrorCode::InvalidArgument, "sign must be +1 or -1");
  Matrix out = a;
  out.noalias() += static_cast<double>(sign) * (v.transpose() * v);
  symmetrize(out);
  return out;
}

}  // namespace linalg
}  // namespace nwbrl
