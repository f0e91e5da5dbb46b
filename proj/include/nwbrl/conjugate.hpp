#pragma once

#include "nwbrl/linalg.hpp"
#include "nwbrl/random.hpp"

namespace nwbrl {

/// Normal-Wishart belief over one linear model block Y = C W + E, where the
/// rows of E share column covariance Sigma:
///   W | Sigma ~ MN(M, Xi^{-1}, Sigma),   Sigma^{-1} ~ Wishart(Omega^{-1}, nu).
/// M is D x P; Xi is D x D; Omega is P x P.
struct NWBelief {
  Matrix M;
  Matrix Xi;
  Matrix XiInv;
  Matrix Omega;
  double nu = 0.0;
  // Online updates applied since XiInv was last corrected against Xi.
  int updates_since_refresh = 0;

  Index dim() const { return M.rows(); }
  Index out_dim() const { return M.cols(); }
};

/// Mean/precision-only belief with a fixed, known column covariance.
struct KnownNoiseBelief {
  Matrix M;
  Matrix Xi;
  Matrix XiInv;
  Matrix Sigma;

  Index dim() const { return M.rows(); }
  Index out_dim() const { return M.cols(); }
};

/// N rows of (s, a, s', r).
struct ContextBatch {
  Matrix S;
  Matrix A;
  Matrix Snext;
  Matrix r;

  static ContextBatch empty(Index state_dim, Index action_dim);
  Index size() const { return S.rows(); }
  Index state_dim() const { return S.cols(); }
  Index action_dim() const { return A.cols(); }
  void append(const RowVector& s, const RowVector& a, const RowVector& s_next, double reward);
  ContextBatch rows(Index begin, Index count) const;
  void validate() const;
};

struct OnlineConfig {
  // Every this many online updates XiInv is corrected against Xi with one
  // Newton-Schulz step (no factorization). 0 disables the correction.
  int refresh_every = 1000;
  double min_denominator = 1e-12;
};

NWBelief make_prior(Index d, Index p, double m0, double xi0, double omega0, double nu0);
KnownNoiseBelief make_known_noise_prior(Index d, double m0, double xi0, const Matrix& sigma);
/// Known-noise belief sharing M and Xi with `b`, with Sigma = (nu * Omega)^{-1}.
KnownNoiseBelief known_noise_from(const NWBelief& b);

/// log MN(Y | C Mu, I_N, sigma_col).
double likelihood_logpdf(const Matrix& mu, const Matrix& sigma_col, const Matrix& c,
                         const Matrix& y);

NWBelief batch_update(const NWBelief& prior, const Matrix& c, const Matrix& y);

/// Rank-one posterior update; XiInv is maintained by Sherman-Morrison, so no
/// D x D factorization happens. Throws DegenerateDenominator.
void online_update(NWBelief& b, const RowVector& c, const RowVector& y,
                   const OnlineConfig& cfg = {});
NWBelief online_updated(const NWBelief& b, const RowVector& c, const RowVector& y,
                        const OnlineConfig& cfg = {});

/// -1/2 (P log|Xi'| + nu' log|Omega'/2|): the marginal log-likelihood up to
/// terms that do not depend on C.
double marginal_ll_reduced(const NWBelief& prior, const Matrix& c, const Matrix& y);
/// Exact log p(Y | C) with every constant included.
double marginal_ll_full(const NWBelief& prior, const Matrix& c, const Matrix& y);

KnownNoiseBelief known_noise_update(const KnownNoiseBelief& prior, const Matrix& c,
                                    const Matrix& y);
void known_noise_online_update(KnownNoiseBelief& b, const RowVector& c, const RowVector& y,
                               const OnlineConfig& cfg = {});
/// -1/2 (P log|Xi'| - tr(Sigma^{-1} M'^T Xi' M')), up to terms free of C.
double known_noise_marginal_ll(const KnownNoiseBelief& prior, const Matrix& c,
                               const Matrix& y);

RowVector predictive_mean(const NWBelief& b, const RowVector& c);
RowVector predictive_mean(const KnownNoiseBelief& b, const RowVector& c);
/// Posterior-predictive log density of one row (matrix-t); equal to
/// marginal_ll_full with N = 1 and the belief as prior.
double predictive_logpdf(const NWBelief& b, const RowVector& c, const RowVector& y);

struct ParamSample {
  Matrix mu;         // D x P
  Matrix sigma_col;  // P x P
};
/// Bartlett draw of Sigma^{-1}, then Mu ~ MN(M, Xi^{-1}, Sigma).
ParamSample sample_params(const NWBelief& b, Rng& rng);

/// KL(q || p) between Normal-Wishart distributions of equal shape.
double nw_kl(const NWBelief& q, const NWBelief& p);

/// log Gamma_p(a), the multivariate log-gamma function.
double log_mvgamma(double a, Index p);
/// d/da log Gamma_p(a).
double mv_digamma(double a, Index p);

void validate(const NWBelief& b);

}  // namespace nwbrl
