#include "nwbrl/agent.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nwbrl/error.hpp"

namespace nwbrl {

RunningNormalizer::RunningNormalizer(Index dim, double clip)
    : mean_(RowVector::Zero(dim)), m2_(RowVector::Zero(dim)), clip_(clip) {}

void RunningNormalizer::update(const RowVector& x) {
  require(x.size() == mean_.size(), ErrorCode::DimensionMismatch,
          "normalizer: wrong feature dimension");
  count_ += 1.0;
  const RowVector delta = x - mean_;
  mean_ += delta / count_;
  m2_ += delta.cwiseProduct(x - mean_);
}

RowVector RunningNormalizer::variance() const {
  if (count_ < 2.0) return RowVector::Ones(mean_.size());
  return m2_ / count_;
}

RowVector RunningNormalizer::normalize(const RowVector& x) const {
  require(x.size() == mean_.size(), ErrorCode::DimensionMismatch,
          "normalizer: wrong feature dimension");
  const RowVector sd = (variance().array() + 1e-8).sqrt().matrix();
  RowVector z = (x - mean_).cwiseQuotient(sd);
  return z.cwiseMax(-clip_).cwiseMin(clip_);
}

Matrix RunningNormalizer::state() const {
  Matrix m = Matrix::Zero(3, std::max<Index>(mean_.size(), 3));
  m.row(0).head(mean_.size()) = mean_;
  m.row(1).head(mean_.size()) = m2_;
  m(2, 0) = count_;
  m(2, 1) = clip_;
  m(2, 2) = static_cast<double>(mean_.size());
  return m;
}

RunningNormalizer RunningNormalizer::from_state(const Matrix& m) {
  require(m.rows() == 3, ErrorCode::InvalidArgument, "normalizer state must have 3 rows");
  const auto dim = static_cast<Index>(m(2, 2));
  require(dim >= 0 && dim <= m.cols(), ErrorCode::InvalidArgument, "bad normalizer state");
  RunningNormalizer n(dim, m(2, 1));
  n.mean_ = m.row(0).head(dim);
  n.m2_ = m.row(1).head(dim);
  n.count_ = m(2, 0);
  return n;
}

Agent::Agent(ModelPriors priors, AgentConfig cfg) : priors_(std::move(priors)), cfg_(cfg) {
  norm_ = RunningNormalizer(feature_dim(), cfg_.feature_clip);
  reset();
}

void Agent::reset() {
  t_ = priors_.transition;
  r_ = priors_.reward;
  kt_ = priors_.transition_known;
  kr_ = priors_.reward_known;
  contexts_ = ContextBatch{};
}

ObserveInfo Agent::observe(const RowVector& s, const RowVector& a, const RowVector& s_next,
                           double r, const BasisNets& nets) {
  const FeatureRows f = nets.eval_row(s, a, s_next);
  RowVector y_r(1);
  y_r(0) = r;
  ObserveInfo info;
  info.transition_l1 = (s_next - f.transition * mean_transition()).cwiseAbs().sum();
  info.reward_l1 = std::abs(r - (f.reward * mean_reward())(0, 0));
  if (cfg_.known_noise) {
    known_noise_online_update(kt_, f.transition, s_next, cfg_.online);
    known_noise_online_update(kr_, f.reward, y_r, cfg_.online);
  } else if (cfg_.track_kl) {
    NWBelief t_old = t_, r_old = r_;
    online_update(t_, f.transition, s_next, cfg_.online);
    online_update(r_, f.reward, y_r, cfg_.online);
    info.kl_transition = nw_kl(t_, t_old);
    info.kl_reward = nw_kl(r_, r_old);
  } else {
    online_update(t_, f.transition, s_next, cfg_.online);
    online_update(r_, f.reward, y_r, cfg_.online);
  }
  if (contexts_.size() == 0) contexts_ = ContextBatch::empty(s.size(), a.size());
  contexts_.append(s, a, s_next, r);
  return info;
}

const Matrix& Agent::mean_transition() const { return cfg_.known_noise ? kt_.M : t_.M; }
const Matrix& Agent::mean_reward() const { return cfg_.known_noise ? kr_.M : r_.M; }

Index Agent::feature_dim() const {
  const Index dt = priors_.transition.dim();
  return dt * (dt + 1) / 2 + priors_.reward.dim() * priors_.reward.out_dim();
}

Index Agent::observation_dim(Index state_dim) const {
  return state_dim + (cfg_.belief_in_observation ? feature_dim() : 0);
}

RowVector Agent::raw_belief_features() const {
  const Matrix& mt = mean_transition();
  const Matrix& mr = mean_reward();
  const Matrix g = mt * mt.transpose();
  RowVector out(feature_dim());
  Index k = 0;
  for (Index i = 0; i < g.rows(); ++i)
    for (Index j = 0; j <= i; ++j) out(k++) = g(i, j);
  for (Index i = 0; i < mr.size(); ++i) out(k++) = mr.data()[i];
  return out;
}

RowVector Agent::policy_features(bool update_stats) {
  const RowVector raw = raw_belief_features();
  if (update_stats && !norm_.frozen()) norm_.update(raw);
  return norm_.normalize(raw);
}

RowVector Agent::observation(const RowVector& state, bool update_stats) {
  if (!cfg_.belief_in_observation) return state;
  const RowVector f = policy_features(update_stats);
  RowVector out(state.size() + f.size());
  out << state, f;
  return out;
}

RolloutBuffer merge_buffers(const std::vector<RolloutBuffer>& parts) {
  RolloutBuffer out;
  for (const RolloutBuffer& p : parts) {
    require(p.size() == 0 || p.dones.back(), ErrorCode::InvalidArgument,
            "merge_buffers: every part must end at an episode boundary");
    out.observations.insert(out.observations.end(), p.observations.begin(), p.observations.end());
    out.actions.insert(out.actions.end(), p.actions.begin(), p.actions.end());
    out.log_probs.insert(out.log_probs.end(), p.log_probs.begin(), p.log_probs.end());
    out.rewards.insert(out.rewards.end(), p.rewards.begin(), p.rewards.end());
    out.values.insert(out.values.end(), p.values.begin(), p.values.end());
    out.dones.insert(out.dones.end(), p.dones.begin(), p.dones.end());
  }
  return out;
}

Rollout collect_rollout(Agent& agent, TaskInstance& task, const Actor& actor,
                        const BasisNets& nets, int horizon, bool update_stats) {
  Rollout out;
  const int steps = std::min(horizon, task.family().horizon - task.t());
  for (int k = 0; k < steps; ++k) {
    const RowVector s = task.state();
    const RowVector obs = agent.observation(s, update_stats);
    ActionSample act = actor(obs);
    StepResult res;
    ObserveInfo info;
    try {
      res = task.step(act.action);
      info = agent.observe(s, task.clip_action(act.action), res.next_state, res.reward, nets);
    } catch (const Error& e) {
      throw Error(e.code(), "step " + std::to_string(task.t()) + ": " + e.detail());
    }
    const bool last = res.done || k + 1 == steps;
    out.buffer.observations.push_back(obs);
    out.buffer.actions.push_back(act.action);
    out.buffer.log_probs.push_back(act.log_prob);
    out.buffer.rewards.push_back(res.reward);
    out.buffer.values.push_back(act.value);
    out.buffer.dones.push_back(last);
    out.trajectory.push_back({task.t() - 1, s, act.action, res.next_state, res.reward, last});
    out.stats.total_return += res.reward;
    out.stats.transition_l1 += info.transition_l1;
    out.stats.reward_l1 += info.reward_l1;
    out.stats.kl_transition += info.kl_transition;
    out.stats.kl_reward += info.kl_reward;
  }
  if (steps > 0) {
    const double n = steps;
    out.stats.transition_l1 /= n;
    out.stats.reward_l1 /= n;
    out.stats.kl_transition /= n;
    out.stats.kl_reward /= n;
  }
  out.stats.success = task.at_goal();
  out.contexts = agent.contexts();
  return out;
}

}  // namespace nwbrl
