#pragma once

#include <functional>
#include <vector>

#include "nwbrl/basis.hpp"
#include "nwbrl/conjugate.hpp"
#include "nwbrl/envs.hpp"

namespace nwbrl {

/// Running per-feature mean/variance (Welford) with clipped standardization.
class RunningNormalizer {
 public:
  RunningNormalizer() = default;
  RunningNormalizer(Index dim, double clip = 10.0);

  void update(const RowVector& x);
  RowVector normalize(const RowVector& x) const;

  Index dim() const { return mean_.size(); }
  double count() const { return count_; }
  const RowVector& mean() const { return mean_; }
  RowVector variance() const;
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }

  // Raw state for checkpoints: row 0 mean, row 1 M2, row 2 (count, clip, dim).
  Matrix state() const;
  static RunningNormalizer from_state(const Matrix& m);

 private:
  RowVector mean_;
  RowVector m2_;
  double count_ = 0.0;
  double clip_ = 10.0;
  bool frozen_ = false;
};

struct AgentConfig {
  bool known_noise = false;
  bool belief_in_observation = true;  // false gives the belief-blind control
  bool track_kl = false;              // KL between consecutive beliefs per observe
  OnlineConfig online;
  double feature_clip = 10.0;
};

struct ObserveInfo {
  double transition_l1 = 0.0;  // |s' - c_T M_T|_1 under the belief before this step
  double reward_l1 = 0.0;      // |r - c_R M_R|
  double kl_transition = 0.0;  // KL(b_{t+1} || b_t), NW beliefs only
  double kl_reward = 0.0;
};

/// Per-task hyper-state: beliefs over both model blocks plus the contexts
/// they were computed from.
class Agent {
 public:
  Agent(ModelPriors priors, AgentConfig cfg);

  void reset();
  ObserveInfo observe(const RowVector& s, const RowVector& a, const RowVector& s_next, double r,
                      const BasisNets& nets);

  /// Lower triangle (row-major, with diagonal) of M_T M_T^T followed by M_R.
  RowVector raw_belief_features() const;
  /// Standardized and clipped belief features; updates the normalizer
  /// statistics first unless it is frozen.
  RowVector policy_features(bool update_stats = true);
  /// Raw state, followed by policy_features() unless the agent is belief-blind.
  RowVector observation(const RowVector& state, bool update_stats = true);

  Index feature_dim() const;
  Index observation_dim(Index state_dim) const;

  const Matrix& mean_transition() const;
  const Matrix& mean_reward() const;
  const NWBelief& belief_transition() const { return t_; }
  const NWBelief& belief_reward() const { return r_; }
  const KnownNoiseBelief& known_transition() const { return kt_; }
  const KnownNoiseBelief& known_reward() const { return kr_; }
  const ContextBatch& contexts() const { return contexts_; }
  const ModelPriors& priors() const { return priors_; }
  const AgentConfig& config() const { return cfg_; }
  RunningNormalizer& normalizer() { return norm_; }
  const RunningNormalizer& normalizer() const { return norm_; }

 private:
  ModelPriors priors_;
  AgentConfig cfg_;
  NWBelief t_, r_;
  KnownNoiseBelief kt_, kr_;
  ContextBatch contexts_;
  RunningNormalizer norm_;
};

struct ActionSample {
  RowVector action;
  double log_prob = 0.0;
  double value = 0.0;
};
using Actor = std::function<ActionSample(const RowVector& observation)>;

struct RolloutBuffer {
  std::vector<RowVector> observations;
  std::vector<RowVector> actions;
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<bool> dones;
  double bootstrap_value = 0.0;  // value of the state after the last step if not done

  std::size_t size() const { return rewards.size(); }
};

/// Concatenates buffers in the given order. Each input must end in done.
RolloutBuffer merge_buffers(const std::vector<RolloutBuffer>& parts);

struct EpisodeStats {
  double total_return = 0.0;
  bool success = false;
  double transition_l1 = 0.0;  // per-step means
  double reward_l1 = 0.0;
  double kl_transition = 0.0;
  double kl_reward = 0.0;
};

struct Rollout {
  RolloutBuffer buffer;
  ContextBatch contexts;
  EpisodeStats stats;
  std::vector<TransitionRecord> trajectory;
};

/// Runs one episode of at most `horizon` steps from the task's current
/// state, updating the agent's beliefs after every step.
Rollout collect_rollout(Agent& agent, TaskInstance& task, const Actor& actor,
                        const BasisNets& nets, int horizon, bool update_stats = true);

}  // namespace nwbrl
