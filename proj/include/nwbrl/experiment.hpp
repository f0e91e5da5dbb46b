#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nwbrl/agent.hpp"
#include "nwbrl/basis.hpp"
#include "nwbrl/envs.hpp"
#include "nwbrl/ppo.hpp"

namespace nwbrl {

struct PriorSpec {
  double m0 = 0.0;
  double xi0 = 1.0;
  double omega0 = 1.0;
  std::optional<double> nu0;  // unset: P + 1

  NWBelief make(Index d, Index p) const;
};

/// Everything needed to reproduce a run. Defaults follow the reference
/// hyperparameter table; JSON keys not present keep their defaults.
struct RunConfig {
  TaskFamily family = TaskFamily::point_goal_2d();
  BasisConfig basis;  // state/action dims are taken from the family
  ModelLossConfig loss;
  double model_lr = 2e-4;
  std::optional<double> model_max_norm;
  int model_grad_epochs = 1;
  int model_grad_steps = 20;
  PPOConfig ppo;
  PriorSpec prior_t{0.0, 1.0, 1.0, 40.0};
  PriorSpec prior_r{0.0, 1.0, 1.0, 2.0};
  OnlineConfig online;

  std::uint64_t seed = 0;
  long total_steps = 200000;  // environment steps
  int tasks_per_iter = 10;    // K
  int eval_every = 10;        // iterations; 0 evaluates only at the end
  int eval_tasks = 20;
  bool eval_deterministic = true;
  int checkpoint_every = 0;  // iterations; 0 writes only the final checkpoint
  bool belief_in_observation = true;
  bool track_kl = true;
  bool train_model = true;
  bool train_policy = true;
  std::string out_dir;  // empty: nothing is written

  int iterations() const;
  BasisConfig basis_config() const;
  ModelPriors priors() const;
  AgentConfig agent_config() const;
  void validate() const;

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

struct EvalResult {
  double success_rate = 0.0;
  double mean_return = 0.0;
  double transition_l1 = 0.0;
  double reward_l1 = 0.0;
  std::vector<double> successes;
  std::vector<double> returns;
  std::vector<double> transition_l1_per_task;
};

struct MetricsRow {
  long step = 0;  // environment steps so far
  int iteration = 0;
  double train_success = 0.0;
  double train_return = 0.0;
  double transition_l1 = 0.0;
  double reward_l1 = 0.0;
  double kl_transition = 0.0;
  double kl_reward = 0.0;
  double model_loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  std::optional<EvalResult> test;

  std::string to_json() const;
  static MetricsRow from_json(const std::string& line);
};

struct RunResult {
  std::filesystem::path dir;
  std::vector<MetricsRow> rows;
  EvalResult final_eval;
  BasisNets nets;
  GaussianPolicy policy;
  RunningNormalizer normalizer;
};

/// Hash of every network weight, policy parameter and normalizer statistic.
std::uint64_t parameter_hash(const BasisNets& nets, const GaussianPolicy& policy,
                             const RunningNormalizer& norm);

/// Zero-shot evaluation on `n_tasks` test tasks, one episode each. Beliefs
/// update within an episode; no parameter or normalizer changes.
EvalResult eval_zero_shot(const GaussianPolicy& policy, const BasisNets& nets,
                          const ModelPriors& priors, const AgentConfig& agent_cfg,
                          const RunningNormalizer& norm, const TaskFamily& family, int n_tasks,
                          std::uint64_t seed, bool deterministic = true);

/// Mean per-step transition L1 error of the online belief on held-out tasks
/// under a uniformly random policy.
double heldout_transition_l1(const BasisNets& nets, const ModelPriors& priors,
                             const AgentConfig& agent_cfg, const TaskFamily& family,
                             int n_tasks, std::uint64_t seed);

/// The full collect / model-learning / policy-learning loop.
RunResult run_experiment(const RunConfig& cfg);

struct Checkpoint {
  RunConfig config;
  BasisNets nets;
  GaussianPolicy policy;
  RunningNormalizer normalizer;
};
void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg,
                     const BasisNets& nets, const GaussianPolicy& policy,
                     const RunningNormalizer& norm);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct KlSeries {
  std::vector<double> transition;
  std::vector<double> reward;
};
KlSeries kl_diagnostic(const std::vector<MetricsRow>& rows);
KlSeries kl_diagnostic(const std::filesystem::path& run_dir);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& run_dir);

struct ArmResult {
  std::string name;
  RunResult result;
};
/// Runs the "full", "known_noise" and "no_reg" arms of `base`.
std::vector<ArmResult> ablate(const RunConfig& base);

/// (D_T, D_R) pairs: D_T in {4, 8, 16, 32} at the base D_R, then D_R in
/// {32, 64, 128, 256, 512} at the base D_T.
std::vector<std::pair<Index, Index>> sweep_grid(Index base_dt, Index base_dr);
std::vector<ArmResult> sweep(const RunConfig& base);

/// Applies the output-root override (NWBRL_OUT_ROOT) to a relative path.
std::filesystem::path resolve_out_dir(const std::string& out);

const char* version_string();

}  // namespace nwbrl
