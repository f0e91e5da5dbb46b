#include "nwbrl/envs.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

#include <json.hpp>

#include "nwbrl/error.hpp"

namespace nwbrl {

TaskFamily TaskFamily::point_goal_2d() {
  TaskFamily f;
  f.name = "PointGoal2D";
  f.kind = FamilyKind::PointGoal2D;
  f.state_dim = 2;
  f.action_dim = 2;
  f.horizon = 60;
  return f;
}

TaskFamily TaskFamily::linear_oracle(Index state_dim, Index action_dim) {
  require(state_dim >= 1 && state_dim <= 8 && action_dim >= 1 && action_dim <= 4,
          ErrorCode::InvalidArgument, "LinearOracle supports D_S <= 8 and D_A <= 4");
  TaskFamily f;
  f.name = "LinearOracle";
  f.kind = FamilyKind::LinearOracle;
  f.state_dim = state_dim;
  f.action_dim = action_dim;
  f.horizon = 100;
  return f;
}

std::uint64_t task_seed(const TaskFamily& family, Split split, std::uint64_t index) {
  constexpr std::uint64_t kTop = 1ULL << 63;
  if (split == Split::Train) return derive_seed(family.train_seed, index) & ~kTop;
  return derive_seed(family.test_seed, index) | kTop;
}

TaskInstance::TaskInstance(const TaskFamily& family, Rng& rng) : family_(family) {
  require(family_.horizon >= 1, ErrorCode::InvalidArgument, "horizon must be positive");
  if (family_.kind == FamilyKind::PointGoal2D) {
    require(family_.state_dim == 2 && family_.action_dim == 2, ErrorCode::InvalidArgument,
            "PointGoal2D is two-dimensional");
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> gain(family_.gain_min, family_.gain_max);
    const double th = angle(rng);
    goal_ = RowVector(2);
    goal_ << family_.goal_radius * std::cos(th), family_.goal_radius * std::sin(th);
    gain_ = gain(rng);
  } else {
    const Index ds = family_.state_dim;
    const Index da = family_.action_dim;
    w_t_ = standard_normal(ds + da, ds, rng) / std::sqrt(static_cast<double>(ds + da));
    // Keep rollouts bounded: cap the spectral norm of the state-to-state block.
    const double sn =
        Eigen::JacobiSVD<Matrix>(w_t_.topRows(ds)).singularValues()(0);
    if (sn > family_.max_state_gain) w_t_.topRows(ds) *= family_.max_state_gain / sn;
    w_r_ = standard_normal(2 * ds + da, 1, rng) / std::sqrt(static_cast<double>(2 * ds + da));
  }
  rng_.seed(rng());
  reset();
}

RowVector TaskInstance::reset() {
  t_ = 0;
  if (family_.kind == FamilyKind::PointGoal2D) {
    state_ = RowVector::Zero(2);
  } else {
    std::normal_distribution<double> n01(0.0, family_.initial_state_std);
    state_ = RowVector(family_.state_dim);
    for (Index i = 0; i < state_.size(); ++i) state_(i) = n01(rng_);
  }
  return state_;
}

RowVector TaskInstance::clip_action(const RowVector& action) const {
  require(action.size() == family_.action_dim, ErrorCode::DimensionMismatch,
          "action has the wrong dimension");
  return action.cwiseMax(-family_.action_bound).cwiseMin(family_.action_bound);
}

bool TaskInstance::at_goal() const {
  return family_.kind == FamilyKind::PointGoal2D &&
         (state_ - goal_).norm() < family_.success_radius;
}

StepResult TaskInstance::step(const RowVector& action) {
  require(t_ < family_.horizon, ErrorCode::EpisodeExhausted,
          "step called after the horizon was reached");
  const RowVector a = clip_action(action);
  StepResult out;
  if (family_.kind == FamilyKind::PointGoal2D) {
    std::normal_distribution<double> noise(0.0, 1.0);
    out.next_state = state_ + gain_ * family_.dt * a;
    if (family_.position_noise > 0.0) {
      for (Index i = 0; i < 2; ++i) out.next_state(i) += family_.position_noise * noise(rng_);
    }
    const double dist = (out.next_state - goal_).norm();
    out.reward = -dist + (dist < family_.success_radius ? family_.success_bonus : 0.0);
  } else {
    const Index ds = family_.state_dim;
    const Index da = family_.action_dim;
    std::normal_distribution<double> n01(0.0, 1.0);
    RowVector x(ds + da);
    x << state_, a;
    out.next_state = x * w_t_;
    for (Index i = 0; i < ds; ++i) out.next_state(i) += family_.transition_noise * n01(rng_);
    RowVector z(2 * ds + da);
    z << state_, a, out.next_state;
    out.reward = (z * w_r_)(0, 0) + family_.reward_noise * n01(rng_);
  }
  state_ = out.next_state;
  ++t_;
  out.done = t_ >= family_.horizon;
  return out;
}

TaskInstance sample_task(const TaskFamily& family, Rng& rng) { return TaskInstance(family, rng); }

TaskInstance make_task(const TaskFamily& family, Split split, std::uint64_t index) {
  Rng rng(task_seed(family, split, index));
  return TaskInstance(family, rng);
}

GroundTruth ground_truth_models(const TaskInstance& task) {
  const TaskFamily& f = task.family_;
  require(f.kind == FamilyKind::LinearOracle, ErrorCode::NotOracleFamily,
          f.name + " has no exact linear ground truth");
  GroundTruth g;
  g.transition_weights = task.w_t_;
  g.transition_cov =
      f.transition_noise * f.transition_noise * Matrix::Identity(f.state_dim, f.state_dim);
  g.reward_weights = task.w_r_;
  g.reward_var = f.reward_noise * f.reward_noise;
  return g;
}

void write_trajectory_jsonl(std::ostream& out, const std::vector<TransitionRecord>& rows) {
  auto vec = [](const RowVector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  for (const TransitionRecord& r : rows) {
    nlohmann::json j;
    j["t"] = r.t;
    j["s"] = vec(r.s);
    j["a"] = vec(r.a);
    j["s_next"] = vec(r.s_next);
    j["r"] = r.r;
    j["done"] = r.done;
    out << j.dump() << '\n';
  }
}

}  // namespace nwbrl
