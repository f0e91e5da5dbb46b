#include "nwbrl/basis.hpp"

#include <cmath>
#include <string>

#include "nwbrl/error.hpp"

namespace nwbrl {

BasisNets::BasisNets(BasisConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  require(cfg_.state_dim >= 1 && cfg_.action_dim >= 1 && cfg_.transition_dim >= 1 &&
              cfg_.reward_dim >= 1,
          ErrorCode::InvalidArgument, "BasisConfig: dimensions must be positive");
  const auto init = nn::Init::VarianceScalingFanIn;
  s_feat_ = nn::MLP({cfg_.state_dim, cfg_.s_feat_layers, cfg_.s_feat_out, nn::Activation::ReLU,
                     false, true},
                    init, rng);
  a_feat_ = nn::MLP({cfg_.action_dim, cfg_.a_feat_layers, cfg_.a_feat_out,
                     nn::Activation::ReLU, false, true},
                    init, rng);
  t_mix_ = nn::MLP({cfg_.s_feat_out + cfg_.a_feat_out, cfg_.t_mix_layers, cfg_.transition_dim,
                    nn::Activation::ReLU, cfg_.t_mix_layernorm, false},
                   init, rng);
  r_mix_ = nn::MLP({2 * cfg_.s_feat_out + cfg_.a_feat_out, cfg_.r_mix_layers, cfg_.reward_dim,
                    nn::Activation::ReLU, cfg_.r_mix_layernorm, false},
                   init, rng);
}

BasisNets init_networks(const BasisConfig& cfg, Rng& rng) { return BasisNets(cfg, rng); }

std::pair<Matrix, Matrix> BasisNets::eval(const ContextBatch& batch) const {
  require(batch.state_dim() == cfg_.state_dim && batch.action_dim() == cfg_.action_dim,
          ErrorCode::DimensionMismatch, "BasisNets::eval: batch dimensions do not match");
  const Index n = batch.size();
  if (n == 0) return {Matrix(0, cfg_.transition_dim), Matrix(0, cfg_.reward_dim)};
  Matrix both(2 * n, cfg_.state_dim);
  both << batch.S, batch.Snext;
  const Matrix sf = s_feat_.eval(both);
  const Matrix af = a_feat_.eval(batch.A);
  Matrix t_in(n, sf.cols() + af.cols());
  t_in << sf.topRows(n), af;
  Matrix r_in(n, 2 * sf.cols() + af.cols());
  r_in << sf.topRows(n), af, sf.bottomRows(n);
  return {t_mix_.eval(t_in), r_mix_.eval(r_in)};
}

FeatureRows BasisNets::eval_row(const RowVector& s, const RowVector& a,
                                const RowVector& s_next) const {
  ContextBatch b{Matrix(s), Matrix(a), Matrix(s_next), Matrix::Zero(1, 1)};
  auto [ct, cr] = eval(b);
  return {ct.row(0), cr.row(0)};
}

std::vector<Matrix*> BasisNets::params() {
  std::vector<Matrix*> out;
  for (nn::MLP* m : {&s_feat_, &a_feat_, &t_mix_, &r_mix_}) {
    auto p = m->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<const Matrix*> BasisNets::params() const {
  std::vector<const Matrix*> out;
  for (const nn::MLP* m : {&s_feat_, &a_feat_, &t_mix_, &r_mix_}) {
    auto p = m->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::size_t BasisNets::param_count() const {
  return s_feat_.param_count() + a_feat_.param_count() + t_mix_.param_count() +
         r_mix_.param_count();
}

FeatureVars forward_features(const BasisNets& nets, const ContextBatch& batch, ad::Tape& tape) {
  const BasisConfig& cfg = nets.config();
  require(batch.state_dim() == cfg.state_dim && batch.action_dim() == cfg.action_dim,
          ErrorCode::DimensionMismatch, "forward_features: batch dimensions do not match");
  const Index n = batch.size();
  Matrix both(2 * n, cfg.state_dim);
  both << batch.S, batch.Snext;
  FeatureVars out;
  ad::Var sf = nets.s_feat().forward(tape, tape.constant(std::move(both)), out.leaves);
  ad::Var af = nets.a_feat().forward(tape, tape.constant(batch.A), out.leaves);
  ad::Var s_cur = ad::slice_rows(sf, 0, n);
  ad::Var s_next = ad::slice_rows(sf, n, n);
  out.transition = nets.t_mix().forward(tape, ad::concat_cols({s_cur, af}), out.leaves);
  out.reward = nets.r_mix().forward(tape, ad::concat_cols({s_cur, af, s_next}), out.leaves);
  return out;
}

ModelPriors ModelPriors::from(NWBelief transition, NWBelief reward) {
  ModelPriors p;
  p.transition_known = known_noise_from(transition);
  p.reward_known = known_noise_from(reward);
  p.transition = std::move(transition);
  p.reward = std::move(reward);
  return p;
}

ad::Var neg_marginal_ll_reduced(ad::Tape& tape, ad::Var c, const Matrix& y,
                                const NWBelief& prior) {
  const double p = static_cast<double>(prior.out_dim());
  const double nu_post = prior.nu + static_cast<double>(y.rows());
  ad::Var ct = ad::transpose(c);
  ad::Var xi = ad::symmetrize(ad::add(ad::matmul(ct, c), tape.constant(prior.Xi)));
  const Matrix xim = prior.Xi * prior.M;
  ad::Var rhs = ad::add(ad::matmul(ct, tape.constant(y)), tape.constant(xim));
  ad::Var m = ad::solve_pd(xi, rhs);
  const Matrix k = prior.Omega + y.transpose() * y + prior.M.transpose() * xim;
  ad::Var omega =
      ad::symmetrize(ad::sub(tape.constant(k), ad::matmul(ad::transpose(rhs), m)));
  ad::Var ll = ad::add(ad::scale(ad::logdet_pd(xi), p),
                       ad::scale(ad::logdet_pd(ad::scale(omega, 0.5)), nu_post));
  return ad::scale(ll, 0.5);
}

ad::Var neg_known_noise_marginal_ll(ad::Tape& tape, ad::Var c, const Matrix& y,
                                    const KnownNoiseBelief& prior) {
  const double p = static_cast<double>(prior.out_dim());
  ad::Var ct = ad::transpose(c);
  ad::Var xi = ad::symmetrize(ad::add(ad::matmul(ct, c), tape.constant(prior.Xi)));
  ad::Var rhs = ad::add(ad::matmul(ct, tape.constant(y)), tape.constant(prior.Xi * prior.M));
  ad::Var m = ad::solve_pd(xi, rhs);
  // tr(Sigma^{-1} M'^T Xi' M') with Xi' M' = rhs; Sigma^{-1} is symmetric.
  const Matrix sigma_inv = linalg::inverse_pd(linalg::cholesky(prior.Sigma));
  ad::Var quad = ad::matmul(ad::transpose(rhs), m);
  ad::Var tr = ad::sum(ad::hadamard(tape.constant(sigma_inv), quad));
  return ad::scale(ad::sub(ad::scale(ad::logdet_pd(xi), p), tr), 0.5);
}

namespace {

double prior_only_nll(const NWBelief& prior) {
  return -marginal_ll_reduced(prior, Matrix(0, prior.dim()), Matrix(0, prior.out_dim()));
}

double prior_only_nll_known(const KnownNoiseBelief& prior) {
  return -known_noise_marginal_ll(prior, Matrix(0, prior.dim()), Matrix(0, prior.out_dim()));
}

}  // namespace

ModelLoss model_loss(const BasisNets& nets, const ModelPriors& priors,
                     const std::vector<ContextBatch>& tasks, const ModelLossConfig& cfg,
                     ad::Tape& tape) {
  require(!tasks.empty(), ErrorCode::EmptyInput, "model_loss: no tasks");
  require(cfg.lambda_t >= 0.0 && cfg.lambda_r >= 0.0, ErrorCode::InvalidArgument,
          "model_loss: regularization coefficients must be nonnegative");
  const BasisConfig& bc = nets.config();

  // All tasks go through the networks in one stacked pass.
  ContextBatch all = ContextBatch::empty(bc.state_dim, bc.action_dim);
  Index total = 0;
  for (const ContextBatch& t : tasks) {
    t.validate();
    total += t.size();
  }
  all.S.resize(total, bc.state_dim);
  all.A.resize(total, bc.action_dim);
  all.Snext.resize(total, bc.state_dim);
  all.r.resize(total, 1);
  Index off = 0;
  for (const ContextBatch& t : tasks) {
    all.S.middleRows(off, t.size()) = t.S;
    all.A.middleRows(off, t.size()) = t.A;
    all.Snext.middleRows(off, t.size()) = t.Snext;
    all.r.middleRows(off, t.size()) = t.r;
    off += t.size();
  }

  ModelLoss out;
  ad::Var ct_all, cr_all;
  const bool any_rows = total > 0;
  if (any_rows) {
    FeatureVars fv = forward_features(nets, all, tape);
    ct_all = fv.transition;
    cr_all = fv.reward;
    out.leaves = std::move(fv.leaves);
  }

  double constant = 0.0;
  std::vector<ad::Var> terms;
  off = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const ContextBatch& t = tasks[i];
    const Index n = t.size();
    if (n == 0) {
      constant += cfg.known_noise ? prior_only_nll_known(priors.transition_known) +
                                        prior_only_nll_known(priors.reward_known)
                                  : prior_only_nll(priors.transition) +
                                        prior_only_nll(priors.reward);
      continue;
    }
    try {
      ad::Var ct = ad::slice_rows(ct_all, off, n);
      ad::Var cr = ad::slice_rows(cr_all, off, n);
      ad::Var nll_t =
          cfg.known_noise
              ? neg_known_noise_marginal_ll(tape, ct, t.Snext, priors.transition_known)
              : neg_marginal_ll_reduced(tape, ct, t.Snext, priors.transition);
      ad::Var nll_r = cfg.known_noise
                          ? neg_known_noise_marginal_ll(tape, cr, t.r, priors.reward_known)
                          : neg_marginal_ll_reduced(tape, cr, t.r, priors.reward);
      ad::Var term = ad::add(nll_t, nll_r);
      if (cfg.regularization) {
        term = ad::add(term, ad::scale(ad::frob_sq(ct), cfg.lambda_t));
        term = ad::add(term, ad::scale(ad::frob_sq(cr), cfg.lambda_r));
      }
      terms.push_back(term);
    } catch (const Error& e) {
      throw Error(e.code(), "model_loss: task " + std::to_string(i) + ": " + e.detail());
    }
    off += n;
  }

  const double inv_tasks = 1.0 / static_cast<double>(tasks.size());
  if (terms.empty()) {
    out.loss = tape.constant(Matrix::Constant(1, 1, constant * inv_tasks));
    return out;
  }
  ad::Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  out.loss = ad::scale(ad::add_scalar(acc, constant), inv_tasks);
  return out;
}

LossAndGrads model_loss_and_grads(const BasisNets& nets, const ModelPriors& priors,
                                  const std::vector<ContextBatch>& tasks,
                                  const ModelLossConfig& cfg) {
  ad::Tape tape;
  ModelLoss ml = model_loss(nets, priors, tasks, cfg, tape);
  LossAndGrads out;
  out.loss = ml.loss.value()(0, 0);
  const auto params = nets.params();
  if (ml.leaves.empty()) {
    for (const Matrix* p : params) out.grads.push_back(Matrix::Zero(p->rows(), p->cols()));
    return out;
  }
  tape.backward(ml.loss);
  for (const ad::Var& v : ml.leaves) out.grads.push_back(tape.grad(v));
  return out;
}

TrainMetrics train_step(BasisNets& nets, nn::Adam& opt, const ModelPriors& priors,
                        const std::vector<ContextBatch>& tasks, const ModelLossConfig& cfg) {
  LossAndGrads lg = model_loss_and_grads(nets, priors, tasks, cfg);
  require(std::isfinite(lg.loss), ErrorCode::NonFiniteLoss, "train_step: model loss is not finite");
  for (const Matrix& g : lg.grads)
    require(g.allFinite(), ErrorCode::NonFiniteGradient, "train_step: non-finite gradient");
  TrainMetrics m;
  m.loss = lg.loss;
  m.grad_norm = opt.step(nets.params(), lg.grads);
  return m;
}

}  // namespace nwbrl
