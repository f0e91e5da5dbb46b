#pragma once

#include <vector>

#include "nwbrl/agent.hpp"
#include "nwbrl/nn.hpp"

namespace nwbrl {

enum class Baseline { ValueNet, LinearFeature };

struct PPOConfig {
  std::vector<Index> hidden{256, 256};
  double clip_eps = 0.5;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double entropy_coef = 5e-3;
  double value_coef = 0.5;
  double lr = 5e-4;
  double max_grad_norm = 1.0;
  int epochs = 10;
  int minibatches = 20;  // minibatch steps per epoch
  double std_min = 1e-6;
  double std_max = 2.0;
  bool std_bounds_are_log = false;  // true: clamp log-std to [std_min, std_max] directly
  double init_log_std = 0.0;
  bool standardize_advantages = true;
  Baseline baseline = Baseline::ValueNet;

  void validate() const;
  double log_std_lo() const;
  double log_std_hi() const;
};

/// Diagonal Gaussian policy with a tanh mean net, a state-independent
/// log-std vector and a separate value net.
class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(Index obs_dim, Index action_dim, const PPOConfig& cfg, Rng& rng);

  struct Output {
    Matrix mean;    // N x A
    RowVector std;  // 1 x A
    Matrix value;   // N x 1
  };
  Output forward(const Matrix& obs) const;
  ActionSample act(const RowVector& obs, Rng& rng, bool deterministic = false) const;

  Index obs_dim() const { return actor_.in_dim(); }
  Index action_dim() const { return actor_.out_dim(); }
  const PPOConfig& config() const { return cfg_; }
  const nn::MLP& actor() const { return actor_; }
  const nn::MLP& critic() const { return critic_; }
  const Matrix& log_std() const { return log_std_; }
  RowVector clamped_log_std() const;

  std::vector<Matrix*> params();
  std::vector<const Matrix*> params() const;
  std::size_t param_count() const;

 private:
  PPOConfig cfg_;
  nn::MLP actor_;
  nn::MLP critic_;
  Matrix log_std_;  // 1 x A
};

GaussianPolicy::Output policy_forward(const GaussianPolicy& policy, const Matrix& obs);

double gaussian_log_prob(const RowVector& mean, const RowVector& std, const RowVector& x);
double gaussian_entropy(const RowVector& std);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};
/// Unstandardized GAE(gamma, lambda); episodes are separated by `dones`.
GaeResult compute_gae(const RolloutBuffer& buffer, double gamma, double lambda);

/// Time-indexed linear regression on observation features, refit on each
/// batch's discounted returns.
class LinearFeatureBaseline {
 public:
  std::vector<double> predict(const RolloutBuffer& buffer) const;
  void fit(const RolloutBuffer& buffer, double gamma);
  bool fitted() const { return coef_.size() > 0; }

 private:
  static Matrix features(const RolloutBuffer& buffer);
  Vector coef_;
};

struct PPOMetrics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double grad_norm = 0.0;
};

/// Clipped-surrogate update over `epochs` x `minibatches` Adam steps.
/// Throws NonFiniteLoss without touching parameters of the failing step.
PPOMetrics ppo_update(GaussianPolicy& policy, nn::Adam& opt, RolloutBuffer buffer,
                      const PPOConfig& cfg, Rng& rng, LinearFeatureBaseline* baseline = nullptr);

}  // namespace nwbrl
