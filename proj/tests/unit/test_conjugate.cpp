#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <gsl/gsl_integration.h>

#include "nwbrl/autodiff.hpp"
#include "nwbrl/basis.hpp"
#include "nwbrl/conjugate.hpp"
#include "nwbrl/error.hpp"
#include "support.hpp"

using namespace nwbrl;
using testing::max_abs_diff;
using testing::random_belief;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// log N(x | 0, cov) for a vector x, computed with Eigen's LLT.
double mvn_logpdf(const Vector& x, const Matrix& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::MatrixXd l = llt.matrixL();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  const Vector z = llt.matrixL().solve(x);
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + logdet + z.squaredNorm());
}

// Row-major vec of Y = C W + E has covariance kron(rowcov, colcov).
Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Vector vec_rows(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

// Independent Normal-Wishart log density at (W, Lambda).
double nw_logpdf(const NWBelief& b, const Matrix& w, const Matrix& lambda) {
  const double d = static_cast<double>(b.dim());
  const double p = static_cast<double>(b.out_dim());
  auto logdet = [](const Matrix& a) {
    return std::log(Eigen::PartialPivLU<Eigen::MatrixXd>(Eigen::MatrixXd(a)).determinant());
  };
  const double ld_lambda = logdet(lambda);
  const double ld_xi = logdet(b.Xi);
  const double ld_omega = logdet(b.Omega);
  const Matrix dm = w - b.M;
  const double mn = -0.5 * d * p * kLog2Pi + 0.5 * p * ld_xi + 0.5 * d * ld_lambda -
                    0.5 * (lambda * dm.transpose() * b.Xi * dm).trace();
  double lmg = 0.25 * p * (p - 1.0) * std::log(std::numbers::pi);
  for (int j = 1; j <= static_cast<int>(p); ++j) lmg += std::lgamma(0.5 * (b.nu + 1.0 - j));
  const double wish = 0.5 * (b.nu - p - 1.0) * ld_lambda - 0.5 * (b.Omega * lambda).trace() -
                      0.5 * b.nu * p * std::log(2.0) + 0.5 * b.nu * ld_omega - lmg;
  return mn + wish;
}

struct Quad {
  gsl_integration_workspace* w = gsl_integration_workspace_alloc(2000);
  ~Quad() { gsl_integration_workspace_free(w); }
};

template <typename F>
double gsl_fn(double x, void* p) {
  return (*static_cast<F*>(p))(x);
}

template <typename F>
double integrate_all(F f, gsl_integration_workspace* w, double tol) {
  gsl_function g{&gsl_fn<F>, &f};
  double r = 0.0, err = 0.0;
  gsl_integration_qagi(&g, tol, tol, 2000, w, &r, &err);
  return r;
}

template <typename F>
double integrate_pos(F f, gsl_integration_workspace* w, double tol) {
  gsl_function g{&gsl_fn<F>, &f};
  double r = 0.0, err = 0.0;
  gsl_integration_qagiu(&g, 0.0, tol, tol, 2000, w, &r, &err);
  return r;
}

}  // namespace

TEST_CASE("make_prior examples") {
  const NWBelief t = make_prior(16, 39, 0.0, 1.0, 1.0, 40.0);
  CHECK(t.nu == 40.0);
  CHECK(max_abs_diff(t.Xi, Matrix::Identity(16, 16)) == 0.0);
  CHECK(max_abs_diff(t.Omega, Matrix::Identity(39, 39)) == 0.0);
  CHECK(t.M.cwiseAbs().maxCoeff() == 0.0);
  const NWBelief r = make_prior(256, 1, 0.0, 1.0, 1.0, 2.0);
  CHECK(known_noise_from(r).Sigma(0, 0) == doctest::Approx(0.5));
  try {
    make_prior(3, 4, 0.0, 1.0, 1.0, 3.0);
    FAIL("expected InvalidDof");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidDof);
  }
  CHECK_THROWS_AS(make_prior(3, 2, 0.0, 0.0, 1.0, 3.0), Error);
}

TEST_CASE("likelihood_logpdf examples and vectorization oracle") {
  CHECK(likelihood_logpdf(Matrix::Zero(1, 1), Matrix::Ones(1, 1), Matrix::Zero(1, 1),
                          Matrix::Zero(1, 1)) == doctest::Approx(-0.5 * kLog2Pi));
  Rng rng(1);
  const Matrix mu = standard_normal(3, 2, rng);
  const Matrix sig = testing::random_spd(2, rng);
  const Matrix c = standard_normal(2, 3, rng);
  const Matrix y = standard_normal(2, 2, rng);
  const double both = likelihood_logpdf(mu, sig, c, y);
  const double rows = likelihood_logpdf(mu, sig, c.topRows(1), y.topRows(1)) +
                      likelihood_logpdf(mu, sig, c.bottomRows(1), y.bottomRows(1));
  CHECK(both == doctest::Approx(rows).epsilon(1e-12));
  for (int t = 0; t < 10; ++t) {
    const Index n = 1 + t % 4, d = 2 + t % 3, p = 1 + t % 3;
    const Matrix m2 = standard_normal(d, p, rng);
    const Matrix s2 = testing::random_spd(p, rng);
    const Matrix c2 = standard_normal(n, d, rng);
    const Matrix y2 = standard_normal(n, p, rng);
    const double oracle = mvn_logpdf(vec_rows(y2 - c2 * m2), kron(Matrix::Identity(n, n), s2));
    CHECK(std::abs(likelihood_logpdf(m2, s2, c2, y2) - oracle) < 1e-8);
  }
}

TEST_CASE("batch_update examples") {
  Rng rng(2);
  const NWBelief prior = random_belief(4, 2, rng);
  const NWBelief same = batch_update(prior, Matrix(0, 4), Matrix(0, 2));
  CHECK(max_abs_diff(same.M, prior.M) == 0.0);
  CHECK(max_abs_diff(same.Omega, prior.Omega) == 0.0);
  CHECK(same.nu == prior.nu);

  const NWBelief s = make_prior(1, 1, 0.0, 1.0, 1.0, 2.0);
  const NWBelief post = batch_update(s, Matrix::Ones(1, 1), Matrix::Constant(1, 1, 2.0));
  CHECK(post.M(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(post.Xi(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(post.Omega(0, 0) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(post.nu == 3.0);

  const NWBelief t = make_prior(3, 2, 0.0, 1.0, 1.0, 40.0);
  CHECK(batch_update(t, standard_normal(7, 3, rng), standard_normal(7, 2, rng)).nu == 47.0);
  CHECK_THROWS_AS(batch_update(t, standard_normal(7, 2, rng), standard_normal(7, 2, rng)), Error);
}

TEST_CASE("online update with a zero feature row") {
  Rng rng(3);
  const NWBelief b = random_belief(3, 2, rng);
  const RowVector y = standard_normal(1, 2, rng);
  const NWBelief u = online_updated(b, RowVector::Zero(3), y);
  CHECK(max_abs_diff(u.Xi, b.Xi) == 0.0);
  CHECK(max_abs_diff(u.XiInv, b.XiInv) == 0.0);
  CHECK(max_abs_diff(u.M, b.M) == 0.0);
  CHECK(max_abs_diff(u.Omega, b.Omega + y.transpose() * y) < 1e-14);
  CHECK(u.nu == b.nu + 1.0);
}

TEST_CASE("online update matches batch update with one row") {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const NWBelief b = random_belief(5, 3, rng);
    const RowVector c = standard_normal(1, 5, rng);
    const RowVector y = standard_normal(1, 3, rng);
    const NWBelief on = online_updated(b, c, y);
    const NWBelief ba = batch_update(b, c, y);
    CHECK(max_abs_diff(on.M, ba.M) < 1e-8);
    CHECK(max_abs_diff(on.Xi, ba.Xi) < 1e-8);
    CHECK(max_abs_diff(on.XiInv, ba.XiInv) < 1e-8);
    CHECK(max_abs_diff(on.Omega, ba.Omega) < 1e-8);
    CHECK(on.nu == ba.nu);
  }
}

TEST_CASE("degenerate denominator is reported") {
  NWBelief b = make_prior(2, 1, 0.0, 1.0, 1.0, 2.0);
  b.XiInv = -Matrix::Identity(2, 2);
  RowVector c(2);
  c << 1.0, 0.0;
  try {
    online_update(b, c, RowVector::Ones(1));
    FAIL("expected DegenerateDenominator");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateDenominator);
  }
}

TEST_CASE("conjugacy: any order of online updates equals the batch posterior") {
  Rng rng(5);
  std::uniform_int_distribution<int> dd(1, 8), pp(1, 4), nn(1, 20);
  for (int t = 0; t < 50; ++t) {
    const Index d = dd(rng), p = pp(rng), n = nn(rng);
    const NWBelief prior = random_belief(d, p, rng);
    const Matrix c = standard_normal(n, d, rng);
    const Matrix y = standard_normal(n, p, rng);
    const NWBelief batch = batch_update(prior, c, y);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    NWBelief seq = prior;
    for (Index i : order) online_update(seq, c.row(i), y.row(i));
    CHECK(max_abs_diff(seq.M, batch.M) < 1e-6);
    CHECK(max_abs_diff(seq.Xi, batch.Xi) < 1e-6);
    CHECK(max_abs_diff(seq.XiInv, batch.XiInv) < 1e-6);
    CHECK(max_abs_diff(seq.Omega, batch.Omega) < 1e-6);
    CHECK(seq.nu == prior.nu + static_cast<double>(n));
  }
}

TEST_CASE("online updates keep the stored matrices symmetric and Omega PD") {
  Rng rng(6);
  NWBelief b = make_prior(6, 2, 0.0, 1.0, 1.0, 3.0);
  for (int i = 0; i < 10000; ++i) {
    online_update(b, standard_normal(1, 6, rng), standard_normal(1, 2, rng));
    CHECK(max_abs_diff(b.Xi, b.Xi.transpose()) == 0.0);
  }
  CHECK(max_abs_diff(b.Omega, b.Omega.transpose()) == 0.0);
  CHECK(max_abs_diff(b.XiInv, b.XiInv.transpose()) == 0.0);
  const auto f = linalg::cholesky(b.Omega);
  CHECK(f.jitter == 0.0);
  CHECK(max_abs_diff(b.Xi * b.XiInv, Matrix::Identity(6, 6)) < 1e-8);
  CHECK(b.nu == 10003.0);
}

TEST_CASE("reduced marginal likelihood differs from the full one by a C-free constant") {
  Rng rng(7);
  const NWBelief prior = random_belief(3, 2, rng);
  const Matrix y = standard_normal(5, 2, rng);
  double first = 0.0;
  for (int t = 0; t < 5; ++t) {
    const Matrix c = standard_normal(5, 3, rng);
    const double gap = marginal_ll_full(prior, c, y) - marginal_ll_reduced(prior, c, y);
    if (t == 0) first = gap;
    CHECK(gap == doctest::Approx(first).epsilon(1e-10));
  }
  const double prior_only = marginal_ll_reduced(prior, Matrix(0, 3), Matrix(0, 2));
  const double expect = -0.5 * (2.0 * std::log(prior.Xi.determinant()) +
                                prior.nu * std::log((0.5 * prior.Omega).determinant()));
  CHECK(prior_only == doctest::Approx(expect).epsilon(1e-12));
  const Matrix c = standard_normal(5, 3, rng);
  CHECK(marginal_ll_reduced(prior, c, 10.0 * y) < marginal_ll_reduced(prior, c, y));
}

TEST_CASE("full marginal likelihood of the scalar instance matches 2-D quadrature") {
  const NWBelief prior = make_prior(1, 1, 0.0, 1.0, 1.0, 2.0);
  const double c = 1.0, y = 2.0;
  Quad outer, inner;
  // p(y) = int_lambda Gamma(lambda | nu/2, rate Omega/2) int_mu N(mu | M, 1/(Xi lambda)) N(y | c mu, 1/lambda)
  auto over_lambda = [&](double lambda) {
    auto over_mu = [&](double mu) {
      const double prior_mu = std::sqrt(prior.Xi(0, 0) * lambda / (2.0 * std::numbers::pi)) *
                              std::exp(-0.5 * prior.Xi(0, 0) * lambda * mu * mu);
      const double lik = std::sqrt(lambda / (2.0 * std::numbers::pi)) *
                         std::exp(-0.5 * lambda * (y - c * mu) * (y - c * mu));
      return prior_mu * lik;
    };
    const double a = 0.5 * prior.nu, rate = 0.5 * prior.Omega(0, 0);
    const double gamma_pdf =
        std::exp(a * std::log(rate) - std::lgamma(a) + (a - 1.0) * std::log(lambda) - rate * lambda);
    return gamma_pdf * integrate_all(over_mu, inner.w, 1e-12);
  };
  const double quad = std::log(integrate_pos(over_lambda, outer.w, 1e-11));
  const double closed =
      marginal_ll_full(prior, Matrix::Constant(1, 1, c), Matrix::Constant(1, 1, y));
  CHECK(std::abs(quad - closed) < 1e-3);
  CHECK(marginal_ll_full(prior, Matrix(0, 1), Matrix(0, 1)) == 0.0);
}

TEST_CASE("chain identity for the full marginal likelihood") {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    const NWBelief prior = random_belief(3, 2, rng);
    const Matrix c = standard_normal(6, 3, rng);
    const Matrix y = standard_normal(6, 2, rng);
    const double whole = marginal_ll_full(prior, c, y);
    const double split = marginal_ll_full(prior, c.topRows(2), y.topRows(2)) +
                         marginal_ll_full(batch_update(prior, c.topRows(2), y.topRows(2)),
                                          c.bottomRows(4), y.bottomRows(4));
    CHECK(std::abs(whole - split) < 1e-8);
  }
}

TEST_CASE("full marginal likelihood matches a Monte Carlo-free matrix-t oracle for P = 1") {
  // For P = 1 the marginal of y is a multivariate t: dof nu, location C M,
  // scale (Omega / nu) (I + C Xi^{-1} C^T).
  Rng rng(9);
  for (int t = 0; t < 10; ++t) {
    const NWBelief prior = random_belief(3, 1, rng);
    const Index n = 1 + t % 4;
    const Matrix c = standard_normal(n, 3, rng);
    const Matrix y = standard_normal(n, 1, rng);
    const double nu = prior.nu, k = static_cast<double>(n);
    const Matrix scale =
        (prior.Omega(0, 0) / nu) * (Matrix::Identity(n, n) + c * prior.XiInv * c.transpose());
    const Vector r = vec_rows(y - c * prior.M);
    const double quad = r.dot(Eigen::MatrixXd(scale).inverse() * r);
    const double oracle = std::lgamma(0.5 * (nu + k)) - std::lgamma(0.5 * nu) -
                          0.5 * k * std::log(nu * std::numbers::pi) -
                          0.5 * std::log(Eigen::MatrixXd(scale).determinant()) -
                          0.5 * (nu + k) * std::log1p(quad / nu);
    CHECK(std::abs(marginal_ll_full(prior, c, y) - oracle) < 1e-8);
  }
}

TEST_CASE("known-noise update examples") {
  Rng rng(10);
  const KnownNoiseBelief kp = make_known_noise_prior(3, 0.0, 1.0, Matrix::Identity(2, 2));
  const KnownNoiseBelief same = known_noise_update(kp, Matrix(0, 3), Matrix(0, 2));
  CHECK(max_abs_diff(same.M, kp.M) == 0.0);
  const KnownNoiseBelief s = make_known_noise_prior(1, 0.0, 1.0, Matrix::Ones(1, 1));
  const KnownNoiseBelief post =
      known_noise_update(s, Matrix::Ones(1, 1), Matrix::Constant(1, 1, 2.0));
  CHECK(post.M(0, 0) == doctest::Approx(1.0));
  CHECK(post.Xi(0, 0) == doctest::Approx(2.0));
  const KnownNoiseBelief from = known_noise_from(make_prior(16, 4, 0.0, 1.0, 1.0, 40.0));
  CHECK(max_abs_diff(from.Sigma, 0.025 * Matrix::Identity(4, 4)) < 1e-15);
}

TEST_CASE("known-noise and noise-inference posteriors share M and Xi") {
  Rng rng(11);
  for (int t = 0; t < 10; ++t) {
    const NWBelief b = random_belief(4, 2, rng);
    KnownNoiseBelief k;
    k.M = b.M;
    k.Xi = b.Xi;
    k.XiInv = b.XiInv;
    k.Sigma = testing::random_spd(2, rng);
    const Matrix c = standard_normal(6, 4, rng);
    const Matrix y = standard_normal(6, 2, rng);
    const NWBelief nb = batch_update(b, c, y);
    const KnownNoiseBelief kb = known_noise_update(k, c, y);
    CHECK(max_abs_diff(nb.M, kb.M) < 1e-10);
    CHECK(max_abs_diff(nb.Xi, kb.Xi) < 1e-12);
    KnownNoiseBelief ko = k;
    for (Index i = 0; i < 6; ++i) known_noise_online_update(ko, c.row(i), y.row(i));
    CHECK(max_abs_diff(ko.M, kb.M) < 1e-8);
    CHECK(max_abs_diff(ko.XiInv, kb.Xi.inverse()) < 1e-8);
  }
}

TEST_CASE("known-noise marginal likelihood against Gaussian oracles") {
  Rng rng(12);
  auto constant = [](const KnownNoiseBelief& k, const Matrix& y) {
    const double n = static_cast<double>(y.rows()), p = static_cast<double>(y.cols());
    const Matrix si = k.Sigma.inverse();
    return -0.5 * n * p * kLog2Pi - 0.5 * n * std::log(k.Sigma.determinant()) +
           0.5 * p * std::log(k.Xi.determinant()) -
           0.5 * (si * (y.transpose() * y + k.M.transpose() * k.Xi * k.M)).trace();
  };
  // N = 0, M = 0.
  const KnownNoiseBelief z = make_known_noise_prior(3, 0.0, 2.0, Matrix::Identity(2, 2));
  CHECK(known_noise_marginal_ll(z, Matrix(0, 3), Matrix(0, 2)) ==
        doctest::Approx(-0.5 * 2.0 * 3.0 * std::log(2.0)));
  // Scalar closed form: y ~ N(c M, Sigma (1 + c^2 / Xi)).
  KnownNoiseBelief s = make_known_noise_prior(1, 0.3, 1.5, Matrix::Constant(1, 1, 0.7));
  const double c = 0.8, y = -0.4;
  const double var = 0.7 * (1.0 + c * c / 1.5);
  const double closed = -0.5 * (kLog2Pi + std::log(var) + (y - c * 0.3) * (y - c * 0.3) / var);
  const Matrix cm = Matrix::Constant(1, 1, c), ym = Matrix::Constant(1, 1, y);
  CHECK(std::abs(known_noise_marginal_ll(s, cm, ym) + constant(s, ym) - closed) < 1e-8);
  // 1-D quadrature over the weight.
  Quad q;
  auto integrand = [&](double mu) {
    const double pv = 0.7 / 1.5;
    return std::exp(-0.5 * (mu - 0.3) * (mu - 0.3) / pv) / std::sqrt(2.0 * std::numbers::pi * pv) *
           std::exp(-0.5 * (y - c * mu) * (y - c * mu) / 0.7) / std::sqrt(2.0 * std::numbers::pi * 0.7);
  };
  CHECK(std::abs(std::log(integrate_all(integrand, q.w, 1e-12)) -
                 (known_noise_marginal_ll(s, cm, ym) + constant(s, ym))) < 1e-3);
  // General case: vec(Y) ~ N(vec(C M), kron(I + C Xi^{-1} C^T, Sigma)).
  for (int t = 0; t < 10; ++t) {
    KnownNoiseBelief k;
    k.M = standard_normal(3, 2, rng);
    k.Xi = testing::random_spd(3, rng);
    k.XiInv = k.Xi.inverse();
    k.Sigma = testing::random_spd(2, rng);
    const Matrix cc = standard_normal(4, 3, rng);
    const Matrix yy = standard_normal(4, 2, rng);
    const Matrix rowcov = Matrix::Identity(4, 4) + cc * k.XiInv * cc.transpose();
    const double oracle = mvn_logpdf(vec_rows(yy - cc * k.M), kron(rowcov, k.Sigma));
    CHECK(std::abs(known_noise_marginal_ll(k, cc, yy) + constant(k, yy) - oracle) < 1e-8);
  }
}

TEST_CASE("predictive mean examples") {
  Rng rng(13);
  const NWBelief zero = make_prior(4, 2, 0.0, 1.0, 1.0, 3.0);
  CHECK(predictive_mean(zero, standard_normal(1, 4, rng)).cwiseAbs().maxCoeff() == 0.0);
  const NWBelief b = random_belief(4, 2, rng);
  RowVector e = RowVector::Zero(4);
  e(2) = 1.0;
  CHECK(max_abs_diff(predictive_mean(b, e), b.M.row(2)) == 0.0);

  const Matrix w = standard_normal(4, 2, rng);
  const Matrix c = standard_normal(500, 4, rng);
  const Matrix y = c * w + 0.1 * standard_normal(500, 2, rng);
  NWBelief post = make_prior(4, 2, 0.0, 1.0, 1.0, 3.0);
  for (Index i = 0; i < 500; ++i) online_update(post, c.row(i), y.row(i));
  const RowVector probe = standard_normal(1, 4, rng);
  CHECK((predictive_mean(post, probe) - probe * w).cwiseAbs().sum() < 0.05);
}

TEST_CASE("predictive density") {
  Rng rng(14);
  const NWBelief b = random_belief(3, 2, rng);
  const RowVector c = standard_normal(1, 3, rng);
  const RowVector y = standard_normal(1, 2, rng);
  CHECK(predictive_logpdf(b, c, y) == marginal_ll_full(b, c, y));

  // Monte Carlo over (Mu, Sigma) draws.
  const int n = 100000;
  std::vector<double> dens(n);
  for (int i = 0; i < n; ++i) {
    const ParamSample s = sample_params(b, rng);
    dens[static_cast<std::size_t>(i)] = std::exp(likelihood_logpdf(s.mu, s.sigma_col, c, y));
  }
  const double mean = std::accumulate(dens.begin(), dens.end(), 0.0) / n;
  double var = 0.0;
  for (double d : dens) var += (d - mean) * (d - mean);
  const double se_log = std::sqrt(var / (n - 1.0) / n) / mean;
  CHECK(std::abs(std::log(mean) - predictive_logpdf(b, c, y)) < 3.0 * se_log);

  // Scalar case integrates to one.
  const NWBelief s = make_prior(1, 1, 0.4, 2.0, 1.5, 3.0);
  const RowVector cs = RowVector::Constant(1, 0.7);
  double total = 0.0;
  const double h = 1e-3;
  for (double v = -60.0; v <= 60.0; v += h)
    total += h * std::exp(predictive_logpdf(s, cs, RowVector::Constant(1, v)));
  CHECK(std::abs(total - 1.0) < 1e-3);
}

TEST_CASE("sample_params moments") {
  Rng rng(15);
  const NWBelief b = random_belief(2, 2, rng);
  const int n = 100000;
  Matrix sum_l = Matrix::Zero(2, 2), sum_l2 = Matrix::Zero(2, 2);
  Matrix sum_m = Matrix::Zero(2, 2), sum_m2 = Matrix::Zero(2, 2);
  for (int i = 0; i < n; ++i) {
    const ParamSample s = sample_params(b, rng);
    const Matrix l = s.sigma_col.inverse();
    sum_l += l;
    sum_l2 += l.cwiseProduct(l);
    sum_m += s.mu;
    sum_m2 += s.mu.cwiseProduct(s.mu);
  }
  const Matrix mean_l = sum_l / n, mean_m = sum_m / n;
  const Matrix se_l = ((sum_l2 / n - mean_l.cwiseProduct(mean_l)) / n).cwiseSqrt();
  const Matrix se_m = ((sum_m2 / n - mean_m.cwiseProduct(mean_m)) / n).cwiseSqrt();
  const Matrix expect_l = b.nu * b.Omega.inverse();
  CHECK(((mean_l - expect_l).cwiseAbs().array() < 3.0 * se_l.array()).all());
  CHECK(((mean_m - b.M).cwiseAbs().array() < 3.0 * se_m.array()).all());

  NWBelief tight = b;
  tight.Xi = 1e12 * Matrix::Identity(2, 2);
  tight.XiInv = 1e-12 * Matrix::Identity(2, 2);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) worst = std::max(worst, max_abs_diff(sample_params(tight, rng).mu, b.M));
  CHECK(worst * worst < 1e-10);
}

TEST_CASE("Normal-Wishart KL") {
  Rng rng(16);
  const NWBelief p = random_belief(3, 2, rng);
  CHECK(nw_kl(p, p) == doctest::Approx(0.0).epsilon(1e-12));
  const NWBelief q = batch_update(p, standard_normal(4, 3, rng), standard_normal(4, 2, rng));
  CHECK(nw_kl(q, p) > 0.0);

  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const ParamSample s = sample_params(q, rng);
    const Matrix lambda = s.sigma_col.inverse();
    const double v = nw_logpdf(q, s.mu, lambda) - nw_logpdf(p, s.mu, lambda);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  CHECK(std::abs(mean - nw_kl(q, p)) < 3.0 * se);
  CHECK_THROWS_AS(nw_kl(q, random_belief(3, 1, rng)), Error);
}

TEST_CASE("multivariate gamma helpers") {
  CHECK(log_mvgamma(2.5, 1) == doctest::Approx(std::lgamma(2.5)));
  const double expect = 0.5 * std::log(std::numbers::pi) + std::lgamma(3.0) + std::lgamma(2.5);
  CHECK(log_mvgamma(3.0, 2) == doctest::Approx(expect));
  const double h = 1e-5;
  for (Index p : {1, 2, 4}) {
    const double fd = (log_mvgamma(5.0 + h, p) - log_mvgamma(5.0 - h, p)) / (2.0 * h);
    CHECK(mv_digamma(5.0, p) == doctest::Approx(fd).epsilon(1e-7));
  }
}

TEST_CASE("gradient of the reduced marginal likelihood in C matches finite differences") {
  Rng rng(17);
  for (bool known : {false, true}) {
    for (int t = 0; t < 5; ++t) {
      const NWBelief prior = random_belief(3, 2, rng);
      const KnownNoiseBelief kprior = known_noise_from(prior);
      const Matrix c0 = standard_normal(5, 3, rng);
      const Matrix y = standard_normal(5, 2, rng);
      auto f = [&](std::span<const double> theta) {
        Matrix c = c0;
        for (Index i = 0; i < c.size(); ++i) c.data()[i] = theta[static_cast<std::size_t>(i)];
        ad::Tape tape;
        ad::Var leaf = tape.leaf(c);
        ad::Var nll = known ? neg_known_noise_marginal_ll(tape, leaf, y, kprior)
                            : neg_marginal_ll_reduced(tape, leaf, y, prior);
        tape.backward(nll);
        const Matrix g = tape.grad(leaf);
        return ad::ValueAndGrad{nll.value()(0, 0), std::vector<double>(g.data(), g.data() + g.size())};
      };
      const double value = f(std::span<const double>(c0.data(), 15)).value;
      const double direct = known ? -known_noise_marginal_ll(kprior, c0, y)
                                  : -marginal_ll_reduced(prior, c0, y);
      CHECK(value == doctest::Approx(direct).epsilon(1e-10));
      CHECK(ad::finite_diff_check(f, std::span<const double>(c0.data(), 15), 1e-6) < 1e-4);
    }
  }
}
