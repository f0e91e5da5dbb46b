#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "nwbrl/linalg.hpp"
#include "nwbrl/random.hpp"

namespace nwbrl {

enum class FamilyKind { PointGoal2D, LinearOracle };

/// A distribution over tasks. Train and test tasks are drawn from disjoint
/// seed sets (see task_seed()).
struct TaskFamily {
  std::string name;
  FamilyKind kind = FamilyKind::PointGoal2D;
  Index state_dim = 2;
  Index action_dim = 2;
  int horizon = 60;
  double action_bound = 1.0;  // actions are clipped to [-bound, bound]^D_A
  std::uint64_t train_seed = 1;
  std::uint64_t test_seed = 2;

  // PointGoal2D
  double goal_radius = 1.0;
  double gain_min = 0.5;
  double gain_max = 1.5;
  double dt = 0.1;
  double position_noise = 0.01;
  double success_radius = 0.1;
  double success_bonus = 1.0;

  // LinearOracle
  double transition_noise = 0.1;  // per-dimension std; covariance noise^2 I
  double reward_noise = 0.1;
  double initial_state_std = 1.0;
  double max_state_gain = 0.9;  // spectral-norm cap on the state block of W_T

  static TaskFamily point_goal_2d();
  static TaskFamily linear_oracle(Index state_dim, Index action_dim);
};

enum class Split { Train, Test };

/// Seed for the index-th task of a split. Train seeds have the top bit clear
/// and test seeds have it set, so the two sets never intersect.
std::uint64_t task_seed(const TaskFamily& family, Split split, std::uint64_t index);

struct StepResult {
  RowVector next_state;
  double reward = 0.0;
  bool done = false;
};

struct GroundTruth {
  Matrix transition_weights;  // (D_S + D_A) x D_S, s' = [s, a] W_T + noise
  Matrix transition_cov;      // D_S x D_S
  Matrix reward_weights;      // (2 D_S + D_A) x 1, r = [s, a, s'] w_R + noise
  double reward_var = 0.0;
};

/// One sampled MDP. Hidden parameters are fixed at construction.
class TaskInstance {
 public:
  TaskInstance(const TaskFamily& family, Rng& rng);

  const TaskFamily& family() const { return family_; }
  RowVector reset();
  StepResult step(const RowVector& action);

  const RowVector& state() const { return state_; }
  int t() const { return t_; }
  bool done() const { return t_ >= family_.horizon; }
  /// PointGoal2D: current position within the success radius of the goal.
  bool at_goal() const;
  RowVector clip_action(const RowVector& action) const;

  // Hidden parameters.
  const RowVector& goal() const { return goal_; }
  double gain() const { return gain_; }

  friend GroundTruth ground_truth_models(const TaskInstance& task);

 private:
  TaskFamily family_;
  Rng rng_;
  RowVector state_;
  int t_ = 0;
  RowVector goal_;
  double gain_ = 1.0;
  Matrix w_t_;
  Matrix w_r_;
};

TaskInstance sample_task(const TaskFamily& family, Rng& rng);
TaskInstance make_task(const TaskFamily& family, Split split, std::uint64_t index);

/// Throws NotOracleFamily unless the task is a LinearOracle task.
GroundTruth ground_truth_models(const TaskInstance& task);

struct TransitionRecord {
  int t = 0;
  RowVector s;
  RowVector a;
  RowVector s_next;
  double r = 0.0;
  bool done = false;
};

/// One JSON object per line: {"t", "s", "a", "s_next", "r", "done"}.
void write_trajectory_jsonl(std::ostream& out, const std::vector<TransitionRecord>& rows);

}  // namespace nwbrl
