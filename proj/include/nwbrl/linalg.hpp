#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace nwbrl {

// Row-major dense storage throughout; every matrix-valued quantity in the
// library is one of these.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace linalg {

struct JitterPolicy {
  // Diagonal loads tried, in order, after a plain factorization fails.
  std::vector<double> ladder{1e-10, 1e-8, 1e-6};
  double symmetry_tol = 1e-8;
};

struct CholeskyFactor {
  Matrix L;            // lower triangular, strictly positive diagonal
  double jitter = 0.0;  // diagonal load that was added before factorizing

  Index dim() const { return L.rows(); }
};

/// Factorizes a symmetric positive-definite matrix, climbing the jitter
/// ladder if needed. Throws NotPositiveDefinite if every rung fails.
CholeskyFactor cholesky(const Matrix& a, const JitterPolicy& policy = {});

/// log|A| = 2 * sum(log L_ii).
double logdet_pd(const CholeskyFactor& f);

/// Solves A X = B given chol(A).
Matrix solve_pd(const CholeskyFactor& f, const Matrix& b);

/// A^{-1} from chol(A), symmetrized.
Matrix inverse_pd(const CholeskyFactor& f);

/// Symmetrized A + sign * v^T v.
Matrix sym_rank_update(const Matrix& a, const RowVector& v, int sign);

/// In-place (X + X^T) / 2.
void symmetrize(Matrix& x);

bool is_symmetric(const Matrix& a, double tol);
bool all_finite(const Matrix& a);

/// Number of cholesky() calls made by the current thread. Used to verify that
/// online belief updates never factorize.
std::uint64_t cholesky_call_count();

}  // namespace linalg
}  // namespace nwbrl
