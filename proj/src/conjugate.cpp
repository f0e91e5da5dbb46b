#include "nwbrl/conjugate.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "nwbrl/error.hpp"

namespace nwbrl {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_rows(const Matrix& c, const Matrix& y, Index d, Index p, const char* op) {
  std::ostringstream msg;
  msg << op << ": expected C as N x " << d << " and Y as N x " << p << ", got " << c.rows()
      << "x" << c.cols() << " and " << y.rows() << "x" << y.cols();
  require(c.rows() == y.rows() && c.cols() == d && y.cols() == p, ErrorCode::DimensionMismatch,
          msg.str());
}

// Upper-triangle rank-one update mirrored to the lower triangle, so the
// result is exactly symmetric as stored.
void sym_rank1(Matrix& a, const Vector& u, double alpha) {
  const Index n = a.rows();
  for (Index i = 0; i < n; ++i) {
    const double ui = alpha * u(i);
    double* row = a.row(i).data();
    for (Index j = i; j < n; ++j) row[j] += ui * u(j);
  }
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < i; ++j) a(i, j) = a(j, i);
}

struct Posterior {
  Matrix xi;
  linalg::CholeskyFactor xi_factor;
  Matrix m;
  Matrix omega;
  double nu;
};

Posterior posterior(const NWBelief& prior, const Matrix& c, const Matrix& y) {
  check_rows(c, y, prior.dim(), prior.out_dim(), "posterior");
  Posterior post;
  post.xi = prior.Xi;
  post.xi.noalias() += c.transpose() * c;
  linalg::symmetrize(post.xi);
  post.xi_factor = linalg::cholesky(post.xi);
  Matrix rhs = prior.Xi * prior.M;
  const Matrix prior_quad = prior.M.transpose() * rhs;
  rhs.noalias() += c.transpose() * y;
  post.m = linalg::solve_pd(post.xi_factor, rhs);
  // M'^T Xi' M' == M'^T (C^T Y + Xi M)
  post.omega = prior.Omega + y.transpose() * y + prior_quad - post.m.transpose() * rhs;
  linalg::symmetrize(post.omega);
  post.nu = prior.nu + static_cast<double>(c.rows());
  return post;
}

double logdet_sym(const Matrix& a) { return linalg::logdet_pd(linalg::cholesky(a)); }

}  // namespace

ContextBatch ContextBatch::empty(Index state_dim, Index action_dim) {
  return ContextBatch{Matrix(0, state_dim), Matrix(0, action_dim), Matrix(0, state_dim),
                      Matrix(0, 1)};
}

void ContextBatch::append(const RowVector& s, const RowVector& a, const RowVector& s_next,
                          double reward) {
  require(s.size() == S.cols() && a.size() == A.cols() && s_next.size() == Snext.cols(),
          ErrorCode::DimensionMismatch, "ContextBatch::append: dimension mismatch");
  const Index n = S.rows();
  S.conservativeResize(n + 1, Eigen::NoChange);
  A.conservativeResize(n + 1, Eigen::NoChange);
  Snext.conservativeResize(n + 1, Eigen::NoChange);
  r.conservativeResize(n + 1, Eigen::NoChange);
  S.row(n) = s;
  A.row(n) = a;
  Snext.row(n) = s_next;
  r(n, 0) = reward;
}

ContextBatch ContextBatch::rows(Index begin, Index count) const {
  return ContextBatch{S.middleRows(begin, count), A.middleRows(begin, count),
                      Snext.middleRows(begin, count), r.middleRows(begin, count)};
}

void ContextBatch::validate() const {
  const Index n = S.rows();
  require(A.rows() == n && Snext.rows() == n && r.rows() == n, ErrorCode::DimensionMismatch,
          "ContextBatch: inconsistent row counts");
  require(Snext.cols() == S.cols() && r.cols() == 1, ErrorCode::DimensionMismatch,
          "ContextBatch: inconsistent column counts");
  require(S.allFinite() && A.allFinite() && Snext.allFinite() && r.allFinite(),
          ErrorCode::InvalidArgument, "ContextBatch: non-finite entries");
}

NWBelief make_prior(Index d, Index p, double m0, double xi0, double omega0, double nu0) {
  require(d >= 1 && p >= 1, ErrorCode::InvalidArgument, "make_prior: empty dimensions");
  require(xi0 > 0.0 && omega0 > 0.0, ErrorCode::InvalidArgument,
          "make_prior: xi0 and omega0 must be positive");
  require(nu0 > static_cast<double>(p) - 1.0, ErrorCode::InvalidDof,
          "make_prior: nu0 must exceed P - 1");
  NWBelief b;
  b.M = Matrix::Constant(d, p, m0);
  b.Xi = xi0 * Matrix::Identity(d, d);
  b.XiInv = (1.0 / xi0) * Matrix::Identity(d, d);
  b.Omega = omega0 * Matrix::Identity(p, p);
  b.nu = nu0;
  return b;
}

KnownNoiseBelief make_known_noise_prior(Index d, double m0, double xi0, const Matrix& sigma) {
  require(d >= 1 && sigma.rows() >= 1 && sigma.rows() == sigma.cols(),
          ErrorCode::InvalidArgument, "make_known_noise_prior: bad dimensions");
  require(xi0 > 0.0, ErrorCode::InvalidArgument, "make_known_noise_prior: xi0 must be positive");
  linalg::cholesky(sigma);
  KnownNoiseBelief b;
  b.M = Matrix::Constant(d, sigma.rows(), m0);
  b.Xi = xi0 * Matrix::Identity(d, d);
  b.XiInv = (1.0 / xi0) * Matrix::Identity(d, d);
  b.Sigma = sigma;
  return b;
}

KnownNoiseBelief known_noise_from(const NWBelief& b) {
  KnownNoiseBelief k;
  k.M = b.M;
  k.Xi = b.Xi;
  k.XiInv = b.XiInv;
  k.Sigma = linalg::inverse_pd(linalg::cholesky(b.nu * b.Omega));
  return k;
}

double likelihood_logpdf(const Matrix& mu, const Matrix& sigma_col, const Matrix& c,
                         const Matrix& y) {
  require(c.cols() == mu.rows() && y.cols() == mu.cols() && c.rows() == y.rows() &&
              sigma_col.rows() == mu.cols() && sigma_col.cols() == mu.cols(),
          ErrorCode::DimensionMismatch, "likelihood_logpdf: dimension mismatch");
  const auto f = linalg::cholesky(sigma_col);
  const double n = static_cast<double>(y.rows());
  const double p = static_cast<double>(y.cols());
  const Matrix resid = y - c * mu;
  // tr(Sigma^{-1} R^T R)
  const Matrix solved = linalg::solve_pd(f, resid.transpose());
  const double quad = (resid.transpose().array() * solved.array()).sum();
  return -0.5 * n * p * kLog2Pi - 0.5 * n * linalg::logdet_pd(f) - 0.5 * quad;
}

NWBelief batch_update(const NWBelief& prior, const Matrix& c, const Matrix& y) {
  check_rows(c, y, prior.dim(), prior.out_dim(), "batch_update");
  if (c.rows() == 0) return prior;
  Posterior post = posterior(prior, c, y);
  NWBelief b;
  b.XiInv = linalg::inverse_pd(post.xi_factor);
  b.Xi = std::move(post.xi);
  b.M = std::move(post.m);
  b.Omega = std::move(post.omega);
  b.nu = post.nu;
  return b;
}

void online_update(NWBelief& b, const RowVector& c, const RowVector& y,
                   const OnlineConfig& cfg) {
  require(c.size() == b.dim() && y.size() == b.out_dim(), ErrorCode::DimensionMismatch,
          "online_update: dimension mismatch");
  const Vector u = b.XiInv * c.transpose();
  const double denom = 1.0 + c.dot(u);
  require(denom > cfg.min_denominator && std::isfinite(denom), ErrorCode::DegenerateDenominator,
          "online_update: 1 + c Xi^{-1} c^T is not positive");
  const RowVector err = y - c * b.M;
  const double inv = 1.0 / denom;
  b.M.noalias() += (inv * u) * err;
  // Omega' = Omega + e^T e / (1 + c Xi^{-1} c^T), the rank-one form of
  // Omega + Y^T Y + M^T Xi M - M'^T Xi' M'.
  sym_rank1(b.Omega, err.transpose(), inv);
  sym_rank1(b.XiInv, u, -inv);
  sym_rank1(b.Xi, c.transpose(), 1.0);
  b.nu += 1.0;
  ++b.updates_since_refresh;
  if (cfg.refresh_every > 0 && b.updates_since_refresh >= cfg.refresh_every) {
    // X <- X (2I - Xi X) squares the residual I - Xi X.
    Matrix corr = -b.Xi * b.XiInv;
    corr.diagonal().array() += 2.0;
    Matrix next = b.XiInv * corr;
    linalg::symmetrize(next);
    b.XiInv = std::move(next);
    b.updates_since_refresh = 0;
  }
}

NWBelief online_updated(const NWBelief& b, const RowVector& c, const RowVector& y,
                        const OnlineConfig& cfg) {
  NWBelief out = b;
  online_update(out, c, y, cfg);
  return out;
}

double marginal_ll_reduced(const NWBelief& prior, const Matrix& c, const Matrix& y) {
  check_rows(c, y, prior.dim(), prior.out_dim(), "marginal_ll_reduced");
  const double p = static_cast<double>(prior.out_dim());
  if (c.rows() == 0) {
    return -0.5 * (p * logdet_sym(prior.Xi) + prior.nu * logdet_sym(0.5 * prior.Omega));
  }
  const Posterior post = posterior(prior, c, y);
  return -0.5 * (p * linalg::logdet_pd(post.xi_factor) +
                 post.nu * logdet_sym(0.5 * post.omega));
}

double marginal_ll_full(const NWBelief& prior, const Matrix& c, const Matrix& y) {
  check_rows(c, y, prior.dim(), prior.out_dim(), "marginal_ll_full");
  if (c.rows() == 0) return 0.0;
  const Index pi = prior.out_dim();
  const double p = static_cast<double>(pi);
  const double n = static_cast<double>(c.rows());
  const Posterior post = posterior(prior, c, y);
  return -0.5 * n * p * kLog2Pi +
         0.5 * p * (logdet_sym(prior.Xi) - linalg::logdet_pd(post.xi_factor)) +
         0.5 * prior.nu * logdet_sym(0.5 * prior.Omega) -
         0.5 * post.nu * logdet_sym(0.5 * post.omega) + log_mvgamma(0.5 * post.nu, pi) -
         log_mvgamma(0.5 * prior.nu, pi);
}

KnownNoiseBelief known_noise_update(const KnownNoiseBelief& prior, const Matrix& c,
                                    const Matrix& y) {
  check_rows(c, y, prior.dim(), prior.out_dim(), "known_noise_update");
  if (c.rows() == 0) return prior;
  KnownNoiseBelief b;
  b.Xi = prior.Xi;
  b.Xi.noalias() += c.transpose() * c;
  linalg::symmetrize(b.Xi);
  const auto f = linalg::cholesky(b.Xi);
  Matrix rhs = prior.Xi * prior.M;
  rhs.noalias() += c.transpose() * y;
  b.M = linalg::solve_pd(f, rhs);
  b.XiInv = linalg::inverse_pd(f);
  b.Sigma = prior.Sigma;
  return b;
}

void known_noise_online_update(KnownNoiseBelief& b, const RowVector& c, const RowVector& y,
                               const OnlineConfig& cfg) {
  require(c.size() == b.dim() && y.size() == b.out_dim(), ErrorCode::DimensionMismatch,
          "known_noise_online_update: dimension mismatch");
  const Vector u = b.XiInv * c.transpose();
  const double denom = 1.0 + c.dot(u);
  require(denom > cfg.min_denominator && std::isfinite(denom), ErrorCode::DegenerateDenominator,
          "known_noise_online_update: 1 + c Xi^{-1} c^T is not positive");
  const double inv = 1.0 / denom;
  const RowVector err = y - c * b.M;
  b.M.noalias() += (inv * u) * err;
  sym_rank1(b.XiInv, u, -inv);
  sym_rank1(b.Xi, c.transpose(), 1.0);
}

double known_noise_marginal_ll(const KnownNoiseBelief& prior, const Matrix& c,
                               const Matrix& y) {
  check_rows(c, y, prior.dim(), prior.out_dim(), "known_noise_marginal_ll");
  const double p = static_cast<double>(prior.out_dim());
  const auto sigma_f = linalg::cholesky(prior.Sigma);
  Matrix xi = prior.Xi;
  xi.noalias() += c.transpose() * c;
  linalg::symmetrize(xi);
  const auto f = linalg::cholesky(xi);
  Matrix rhs = prior.Xi * prior.M;
  rhs.noalias() += c.transpose() * y;
  const Matrix m = linalg::solve_pd(f, rhs);
  // tr(Sigma^{-1} M'^T Xi' M') with Xi' M' = rhs
  const Matrix quad = m.transpose() * rhs;
  const double tr = linalg::solve_pd(sigma_f, quad).trace();
  return -0.5 * (p * linalg::logdet_pd(f) - tr);
}

RowVector predictive_mean(const NWBelief& b, const RowVector& c) {
  require(c.size() == b.dim(), ErrorCode::DimensionMismatch, "predictive_mean: dimension mismatch");
  return c * b.M;
}

RowVector predictive_mean(const KnownNoiseBelief& b, const RowVector& c) {
  require(c.size() == b.dim(), ErrorCode::DimensionMismatch, "predictive_mean: dimension mismatch");
  return c * b.M;
}

double predictive_logpdf(const NWBelief& b, const RowVector& c, const RowVector& y) {
  return marginal_ll_full(b, Matrix(c), Matrix(y));
}

ParamSample sample_params(const NWBelief& b, Rng& rng) {
  validate(b);
  const Index p = b.out_dim();
  const Index d = b.dim();
  // Lambda = L A A^T L^T with L L^T = Omega^{-1}.
  const Matrix scale = linalg::inverse_pd(linalg::cholesky(b.Omega));
  const Matrix l = linalg::cholesky(scale).L;
  Matrix a = Matrix::Zero(p, p);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (Index i = 0; i < p; ++i) {
    std::gamma_distribution<double> chi2(0.5 * (b.nu - static_cast<double>(i)), 2.0);
    a(i, i) = std::sqrt(chi2(rng));
    for (Index j = 0; j < i; ++j) a(i, j) = n01(rng);
  }
  const Matrix la = l * a;
  Matrix lambda = la * la.transpose();
  linalg::symmetrize(lambda);
  ParamSample s;
  s.sigma_col = linalg::inverse_pd(linalg::cholesky(lambda));
  const Matrix row_chol = linalg::cholesky(b.XiInv).L;
  const Matrix col_chol = linalg::cholesky(s.sigma_col).L;
  s.mu = b.M + row_chol * standard_normal(d, p, rng) * col_chol.transpose();
  return s;
}

double log_mvgamma(double a, Index p) {
  const double pd = static_cast<double>(p);
  double out = 0.25 * pd * (pd - 1.0) * std::log(std::numbers::pi);
  for (Index j = 1; j <= p; ++j) out += std::lgamma(a + 0.5 * (1.0 - static_cast<double>(j)));
  return out;
}

double mv_digamma(double a, Index p) {
  double out = 0.0;
  for (Index j = 1; j <= p; ++j)
    out += boost::math::digamma(a + 0.5 * (1.0 - static_cast<double>(j)));
  return out;
}

double nw_kl(const NWBelief& q, const NWBelief& p) {
  require(q.dim() == p.dim() && q.out_dim() == p.out_dim(), ErrorCode::DimensionMismatch,
          "nw_kl: beliefs have different shapes");
  const Index di = q.dim();
  const Index pi = q.out_dim();
  const double d = static_cast<double>(di);
  const double pd = static_cast<double>(pi);

  const auto xq = linalg::cholesky(q.Xi);
  const auto xp = linalg::cholesky(p.Xi);
  const auto oq = linalg::cholesky(q.Omega);
  const auto op = linalg::cholesky(p.Omega);
  const double ld_xq = linalg::logdet_pd(xq);
  const double ld_xp = linalg::logdet_pd(xp);
  const double ld_oq = linalg::logdet_pd(oq);
  const double ld_op = linalg::logdet_pd(op);

  // Expected matrix-normal KL under q's Wishart, E[Sigma^{-1}] = nu_q Omega_q^{-1}.
  const Matrix delta = q.M - p.M;
  const Matrix quad = delta.transpose() * p.Xi * delta;
  const double tr_xi = linalg::solve_pd(xq, p.Xi).trace();
  const double mn = 0.5 * (pd * tr_xi + q.nu * linalg::solve_pd(oq, quad).trace() - d * pd +
                           pd * (ld_xq - ld_xp));

  // Wishart KL with scales Omega_q^{-1}, Omega_p^{-1}.
  const double tr_om = linalg::solve_pd(oq, p.Omega).trace();
  const double wish = -0.5 * p.nu * (ld_op - ld_oq) + 0.5 * q.nu * (tr_om - pd) +
                      log_mvgamma(0.5 * p.nu, pi) - log_mvgamma(0.5 * q.nu, pi) +
                      0.5 * (q.nu - p.nu) * mv_digamma(0.5 * q.nu, pi);
  return std::max(0.0, mn + wish);
}

void validate(const NWBelief& b) {
  const Index d = b.dim();
  const Index p = b.out_dim();
  require(b.Xi.rows() == d && b.Xi.cols() == d && b.XiInv.rows() == d && b.XiInv.cols() == d &&
              b.Omega.rows() == p && b.Omega.cols() == p,
          ErrorCode::DimensionMismatch, "NWBelief: inconsistent shapes");
  require(b.M.allFinite() && b.Xi.allFinite() && b.XiInv.allFinite() && b.Omega.allFinite() &&
              std::isfinite(b.nu),
          ErrorCode::InvalidArgument, "NWBelief: non-finite entries");
  require(b.nu > static_cast<double>(p) - 1.0, ErrorCode::InvalidDof,
          "NWBelief: nu must exceed P - 1");
}

}  // namespace nwbrl
