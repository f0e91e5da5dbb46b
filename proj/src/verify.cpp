#include "nwbrl/verify.hpp"

#include <cmath>
#include <sstream>

#include "nwbrl/basis.hpp"
#include "nwbrl/conjugate.hpp"
#include "nwbrl/error.hpp"
#include "nwbrl/metrics.hpp"

namespace nwbrl {

namespace {

double max_abs(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

NWBelief random_belief(Index d, Index p, Rng& rng) {
  NWBelief b = make_prior(d, p, 0.0, 1.0, 1.0, static_cast<double>(p + 1));
  b.M = standard_normal(d, p, rng);
  const Matrix a = standard_normal(d, d, rng);
  b.Xi = a * a.transpose() / static_cast<double>(d) + Matrix::Identity(d, d);
  b.XiInv = linalg::inverse_pd(linalg::cholesky(b.Xi));
  const Matrix o = standard_normal(p, p, rng);
  b.Omega = o * o.transpose() / static_cast<double>(p) + Matrix::Identity(p, p);
  return b;
}

CheckResult conjugacy(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> dim(1, 8), out(1, 4), rows(1, 20);
    const Index d = dim(rng), p = out(rng), n = rows(rng);
    const NWBelief prior = random_belief(d, p, rng);
    const Matrix c = standard_normal(n, d, rng);
    const Matrix y = standard_normal(n, p, rng);
    NWBelief seq = prior;
    for (Index i = 0; i < n; ++i) online_update(seq, c.row(i), y.row(i));
    const NWBelief batch = batch_update(prior, c, y);
    worst = std::max({worst, max_abs(seq.M, batch.M), max_abs(seq.Xi, batch.Xi),
                      max_abs(seq.XiInv, batch.XiInv), max_abs(seq.Omega, batch.Omega),
                      std::abs(seq.nu - batch.nu)});
  }
  return {"online updates match the batch posterior", worst < 1e-6,
          "max abs diff " + std::to_string(worst)};
}

CheckResult chain_rule(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const NWBelief prior = random_belief(3, 2, rng);
    const Matrix c = standard_normal(6, 3, rng);
    const Matrix y = standard_normal(6, 2, rng);
    const double whole = marginal_ll_full(prior, c, y);
    const double split = marginal_ll_full(prior, c.topRows(2), y.topRows(2)) +
                         marginal_ll_full(batch_update(prior, c.topRows(2), y.topRows(2)),
                                          c.bottomRows(4), y.bottomRows(4));
    worst = std::max(worst, std::abs(whole - split));
  }
  return {"marginal likelihood chain rule", worst < 1e-8, "max abs diff " + std::to_string(worst)};
}

CheckResult gradient(Rng& rng) {
  BasisConfig cfg;
  cfg.state_dim = 2;
  cfg.action_dim = 1;
  cfg.transition_dim = 3;
  cfg.reward_dim = 4;
  cfg.s_feat_layers = {5};
  cfg.s_feat_out = 4;
  cfg.a_feat_layers = {3};
  cfg.a_feat_out = 3;
  cfg.t_mix_layers = {6};
  cfg.r_mix_layers = {6};
  BasisNets nets(cfg, rng);
  // Zero biases leave dead units exactly on the rectifier kink.
  for (Matrix* m : nets.params())
    if (m->rows() == 1) *m = 0.1 * standard_normal(1, m->cols(), rng);
  const ModelPriors priors =
      ModelPriors::from(make_prior(3, 2, 0.0, 1.0, 1.0, 3.0), make_prior(4, 1, 0.0, 1.0, 1.0, 2.0));
  std::vector<ContextBatch> tasks;
  for (int t = 0; t < 2; ++t)
    tasks.push_back({standard_normal(5, 2, rng), standard_normal(5, 1, rng),
                     standard_normal(5, 2, rng), standard_normal(5, 1, rng)});
  const ModelLossConfig lcfg;
  std::vector<double> theta;
  for (const Matrix* m : nets.params()) theta.insert(theta.end(), m->data(), m->data() + m->size());
  auto f = [&](std::span<const double> x) {
    BasisNets copy = nets;
    std::size_t k = 0;
    for (Matrix* m : copy.params())
      for (Index i = 0; i < m->size(); ++i) m->data()[i] = x[k++];
    const LossAndGrads lg = model_loss_and_grads(copy, priors, tasks, lcfg);
    ad::ValueAndGrad vg{lg.loss, {}};
    for (const Matrix& g : lg.grads) vg.grad.insert(vg.grad.end(), g.data(), g.data() + g.size());
    return vg;
  };
  const double err = ad::finite_diff_check(f, theta, 1e-5);
  return {"model loss gradient vs finite differences", err < 1e-4,
          "max relative error " + std::to_string(err)};
}

CheckResult metrics_examples() {
  const bool ok = iqm({1, 2, 3, 4}) == 2.5 && iqm({0, 0, 0, 100}) == 0.0 &&
                  iqm({7, 7, 7, 7, 7}) == 7.0;
  const Interval ci = bootstrap_ci({3, 3, 3}, 0.95, 200, 1);
  return {"iqm and bootstrap examples", ok && ci.lo == 3.0 && ci.hi == 3.0, ""};
}

}  // namespace

std::vector<CheckResult> run_self_checks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  auto guarded = [&out](const char* name, auto&& fn) {
    try {
      out.push_back(fn());
    } catch (const std::exception& e) {
      out.push_back({name, false, e.what()});
    }
  };
  guarded("conjugacy", [&] { return conjugacy(rng); });
  guarded("chain rule", [&] { return chain_rule(rng); });
  guarded("gradient", [&] { return gradient(rng); });
  guarded("metrics", [] { return metrics_examples(); });
  return out;
}

}  // namespace nwbrl
