#pragma once

#include <cmath>

#include "nwbrl/conjugate.hpp"
#include "nwbrl/linalg.hpp"
#include "nwbrl/random.hpp"

namespace nwbrl::testing {

inline Matrix random_spd(Index d, Rng& rng, double ridge = 1.0) {
  const Matrix a = standard_normal(d, d, rng);
  return a * a.transpose() / static_cast<double>(d) + ridge * Matrix::Identity(d, d);
}

// SPD matrix with prescribed condition number via a random orthogonal basis.
inline Matrix spd_with_condition(Index d, double cond, Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(standard_normal(d, d, rng));
  const Matrix q = qr.householderQ();
  Vector ev(d);
  for (Index i = 0; i < d; ++i)
    ev(i) = std::pow(cond, d == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(d - 1));
  Matrix a = q * ev.asDiagonal() * q.transpose();
  return (a + a.transpose()) / 2.0;
}

inline NWBelief random_belief(Index d, Index p, Rng& rng) {
  NWBelief b = make_prior(d, p, 0.0, 1.0, 1.0, static_cast<double>(p + 1));
  b.M = standard_normal(d, p, rng);
  b.Xi = random_spd(d, rng);
  b.XiInv = b.Xi.inverse();
  b.XiInv = ((b.XiInv + b.XiInv.transpose()) / 2.0).eval();
  b.Omega = random_spd(p, rng);
  std::uniform_real_distribution<double> extra(0.5, 5.0);
  b.nu = static_cast<double>(p) + extra(rng);
  return b;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace nwbrl::testing
