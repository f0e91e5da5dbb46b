#include "nwbrl/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "nwbrl/error.hpp"

namespace nwbrl {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)
}

void PPOConfig::validate() const {
  require(clip_eps > 0.0 && clip_eps < 1.0, ErrorCode::Config, "clip_eps must be in (0, 1)");
  require(gamma > 0.0 && gamma <= 1.0 && gae_lambda >= 0.0 && gae_lambda <= 1.0,
          ErrorCode::Config, "gamma and lambda must be in [0, 1]");
  require(lr > 0.0 && max_grad_norm > 0.0 && epochs >= 1 && minibatches >= 1,
          ErrorCode::Config, "PPO optimizer settings must be positive");
  require(entropy_coef >= 0.0 && value_coef >= 0.0, ErrorCode::Config,
          "loss coefficients must be nonnegative");
  require(std_bounds_are_log ? std_min < std_max : (std_min > 0.0 && std_min < std_max),
          ErrorCode::Config, "invalid std bounds");
}

double PPOConfig::log_std_lo() const { return std_bounds_are_log ? std_min : std::log(std_min); }
double PPOConfig::log_std_hi() const { return std_bounds_are_log ? std_max : std::log(std_max); }

GaussianPolicy::GaussianPolicy(Index obs_dim, Index action_dim, const PPOConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  actor_ = nn::MLP({obs_dim, cfg_.hidden, action_dim, nn::Activation::Tanh, false, false},
                   nn::Init::XavierUniform, rng);
  critic_ = nn::MLP({obs_dim, cfg_.hidden, 1, nn::Activation::Tanh, false, false},
                    nn::Init::XavierUniform, rng);
  log_std_ = Matrix::Constant(1, action_dim, cfg_.init_log_std);
}

RowVector GaussianPolicy::clamped_log_std() const {
  return log_std_.row(0).cwiseMax(cfg_.log_std_lo()).cwiseMin(cfg_.log_std_hi());
}

GaussianPolicy::Output GaussianPolicy::forward(const Matrix& obs) const {
  require(obs.cols() == obs_dim(), ErrorCode::DimensionMismatch,
          "policy_forward: observation has the wrong dimension");
  return {actor_.eval(obs), clamped_log_std().array().exp().matrix(), critic_.eval(obs)};
}

GaussianPolicy::Output policy_forward(const GaussianPolicy& policy, const Matrix& obs) {
  return policy.forward(obs);
}

ActionSample GaussianPolicy::act(const RowVector& obs, Rng& rng, bool deterministic) const {
  const Output o = forward(obs);
  ActionSample s;
  s.action = o.mean.row(0);
  if (!deterministic) {
    std::normal_distribution<double> n01(0.0, 1.0);
    for (Index i = 0; i < s.action.size(); ++i) s.action(i) += o.std(i) * n01(rng);
  }
  s.log_prob = gaussian_log_prob(o.mean.row(0), o.std, s.action);
  s.value = o.value(0, 0);
  return s;
}

std::vector<Matrix*> GaussianPolicy::params() {
  auto out = actor_.params();
  auto c = critic_.params();
  out.insert(out.end(), c.begin(), c.end());
  out.push_back(&log_std_);
  return out;
}

std::vector<const Matrix*> GaussianPolicy::params() const {
  auto out = actor_.params();
  auto c = critic_.params();
  out.insert(out.end(), c.begin(), c.end());
  out.push_back(&log_std_);
  return out;
}

std::size_t GaussianPolicy::param_count() const {
  return actor_.param_count() + critic_.param_count() + static_cast<std::size_t>(log_std_.size());
}

double gaussian_log_prob(const RowVector& mean, const RowVector& std, const RowVector& x) {
  double lp = 0.0;
  for (Index i = 0; i < mean.size(); ++i) {
    const double z = (x(i) - mean(i)) / std(i);
    lp += -0.5 * z * z - std::log(std(i)) - kHalfLog2Pi;
  }
  return lp;
}

double gaussian_entropy(const RowVector& std) {
  double h = 0.0;
  for (Index i = 0; i < std.size(); ++i) h += 0.5 + kHalfLog2Pi + std::log(std(i));
  return h;
}

GaeResult compute_gae(const RolloutBuffer& b, double gamma, double lambda) {
  const std::size_t n = b.size();
  require(b.values.size() == n && b.dones.size() == n, ErrorCode::DimensionMismatch,
          "compute_gae: inconsistent buffer");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double nonterminal = b.dones[k] ? 0.0 : 1.0;
    const double next_value = k + 1 == n ? b.bootstrap_value : b.values[k + 1];
    const double delta = b.rewards[k] + gamma * next_value * nonterminal - b.values[k];
    next_adv = delta + gamma * lambda * nonterminal * next_adv;
    out.advantages[k] = next_adv;
    out.returns[k] = next_adv + b.values[k];
  }
  return out;
}

Matrix LinearFeatureBaseline::features(const RolloutBuffer& b) {
  const std::size_t n = b.size();
  const Index o = n ? b.observations[0].size() : 0;
  Matrix f(static_cast<Index>(n), 2 * o + 4);
  int t = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const RowVector& x = b.observations[k];
    const double tt = t / 100.0;
    f.row(static_cast<Index>(k)) << x.cwiseMax(-10.0).cwiseMin(10.0),
        x.cwiseMax(-10.0).cwiseMin(10.0).array().square().matrix(), tt, tt * tt, tt * tt * tt,
        1.0;
    t = b.dones[k] ? 0 : t + 1;
  }
  return f;
}

std::vector<double> LinearFeatureBaseline::predict(const RolloutBuffer& b) const {
  if (!fitted()) return std::vector<double>(b.size(), 0.0);
  const Vector v = features(b) * coef_;
  return {v.data(), v.data() + v.size()};
}

void LinearFeatureBaseline::fit(const RolloutBuffer& b, double gamma) {
  const Matrix f = features(b);
  Vector ret(f.rows());
  double g = 0.0;
  for (Index k = f.rows(); k-- > 0;) {
    if (b.dones[static_cast<std::size_t>(k)]) g = 0.0;
    g = b.rewards[static_cast<std::size_t>(k)] + gamma * g;
    ret(k) = g;
  }
  const Matrix ftf = f.transpose() * f;
  const Vector fty = f.transpose() * ret;
  for (double reg = 1e-5; reg < 1e3; reg *= 10.0) {
    Matrix a = ftf;
    a.diagonal().array() += reg;
    Eigen::LDLT<Matrix> ldlt(a);
    if (ldlt.info() != Eigen::Success) continue;
    Vector c = ldlt.solve(fty);
    if (c.allFinite()) {
      coef_ = c;
      return;
    }
  }
}

PPOMetrics ppo_update(GaussianPolicy& policy, nn::Adam& opt, RolloutBuffer buffer,
                      const PPOConfig& cfg, Rng& rng, LinearFeatureBaseline* baseline) {
  const std::size_t n = buffer.size();
  require(n > 0, ErrorCode::EmptyInput, "ppo_update: empty buffer");
  const bool use_linear = cfg.baseline == Baseline::LinearFeature;
  require(!use_linear || baseline != nullptr, ErrorCode::Config,
          "ppo_update: linear baseline requested but not provided");
  if (use_linear) {
    buffer.values = baseline->predict(buffer);
    buffer.bootstrap_value = 0.0;
  }
  GaeResult gae = compute_gae(buffer, cfg.gamma, cfg.gae_lambda);
  if (use_linear) baseline->fit(buffer, cfg.gamma);
  std::vector<double> adv = gae.advantages;
  if (cfg.standardize_advantages && n > 1) {
    const double mu = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double a : adv) var += (a - mu) * (a - mu);
    const double sd = std::sqrt(var / static_cast<double>(n)) + 1e-8;
    for (double& a : adv) a = (a - mu) / sd;
  }

  const Index obs_dim = policy.obs_dim();
  const Index act_dim = policy.action_dim();
  const double log_norm = static_cast<double>(act_dim) * kHalfLog2Pi;
  const double ent_const = static_cast<double>(act_dim) * (0.5 + kHalfLog2Pi);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t mb_count = std::min<std::size_t>(static_cast<std::size_t>(cfg.minibatches), n);
  auto params = policy.params();

  PPOMetrics m;
  int steps = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t mb = 0; mb < mb_count; ++mb) {
      const std::size_t begin = mb * n / mb_count;
      const std::size_t end = (mb + 1) * n / mb_count;
      const auto rows = static_cast<Index>(end - begin);
      Matrix obs(rows, obs_dim), act(rows, act_dim), old_lp(rows, 1), a_mb(rows, 1),
          ret(rows, 1);
      for (Index i = 0; i < rows; ++i) {
        const std::size_t k = order[begin + static_cast<std::size_t>(i)];
        obs.row(i) = buffer.observations[k];
        act.row(i) = buffer.actions[k];
        old_lp(i, 0) = buffer.log_probs[k];
        a_mb(i, 0) = adv[k];
        ret(i, 0) = gae.returns[k];
      }

      ad::Tape tape;
      std::vector<ad::Var> leaves;
      ad::Var x = tape.constant(obs);
      ad::Var mean = policy.actor().forward(tape, x, leaves);
      ad::Var value = policy.critic().forward(tape, x, leaves);
      ad::Var log_std = tape.leaf(policy.log_std());
      leaves.push_back(log_std);
      ad::Var ls = ad::clamp(log_std, cfg.log_std_lo(), cfg.log_std_hi());
      ad::Var z = ad::mul_row(ad::sub(tape.constant(act), mean), ad::exp(ad::neg(ls)));
      ad::Var logp = ad::add_scalar(
          ad::add_row(ad::scale(ad::row_sum(ad::square(z)), -0.5), ad::neg(ad::sum(ls))),
          -log_norm);
      ad::Var ratio = ad::exp(ad::sub(logp, tape.constant(old_lp)));
      ad::Var adv_c = tape.constant(a_mb);
      ad::Var surr = ad::minimum(ad::hadamard(ratio, adv_c),
                                 ad::hadamard(ad::clamp(ratio, 1.0 - cfg.clip_eps,
                                                        1.0 + cfg.clip_eps),
                                              adv_c));
      ad::Var policy_loss = ad::neg(ad::mean(surr));
      ad::Var entropy = ad::add_scalar(ad::sum(ls), ent_const);
      ad::Var loss = ad::sub(policy_loss, ad::scale(entropy, cfg.entropy_coef));
      ad::Var value_loss = ad::mean(ad::square(ad::sub(value, tape.constant(ret))));
      if (!use_linear) loss = ad::add(loss, ad::scale(value_loss, cfg.value_coef));

      const double lv = loss.value()(0, 0);
      require(std::isfinite(lv), ErrorCode::NonFiniteLoss,
              "ppo_update: non-finite loss at step " + std::to_string(steps));
      tape.backward(loss);
      std::vector<Matrix> grads;
      grads.reserve(leaves.size());
      for (const ad::Var& leaf : leaves) grads.push_back(tape.grad(leaf));
      for (const Matrix& g : grads)
        require(g.allFinite(), ErrorCode::NonFiniteGradient,
                "ppo_update: non-finite gradient at step " + std::to_string(steps));
      m.grad_norm += opt.step(params, grads);

      const Matrix& r = ratio.value();
      m.policy_loss += policy_loss.value()(0, 0);
      m.value_loss += value_loss.value()(0, 0);
      m.entropy += entropy.value()(0, 0);
      m.clip_fraction +=
          ((r.array() - 1.0).abs() > cfg.clip_eps).cast<double>().mean();
      m.approx_kl += (old_lp - logp.value()).mean();
      ++steps;
    }
  }
  const double s = steps;
  m.policy_loss /= s;
  m.value_loss /= s;
  m.entropy /= s;
  m.clip_fraction /= s;
  m.approx_kl /= s;
  m.grad_norm /= s;
  return m;
}

}  // namespace nwbrl
