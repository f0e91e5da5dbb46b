#pragma once

#include <vector>

#include "nwbrl/autodiff.hpp"
#include "nwbrl/conjugate.hpp"
#include "nwbrl/nn.hpp"

namespace nwbrl {

/// Layer sizes for the learnable basis functions. Defaults follow the
/// reference hyperparameter table.
struct BasisConfig {
  Index state_dim = 0;
  Index action_dim = 0;
  Index transition_dim = 16;  // D_T
  Index reward_dim = 256;     // D_R
  std::vector<Index> s_feat_layers{64, 32};
  Index s_feat_out = 32;
  std::vector<Index> a_feat_layers{32, 16};
  Index a_feat_out = 16;
  std::vector<Index> t_mix_layers{64, 32};
  bool t_mix_layernorm = true;
  std::vector<Index> r_mix_layers{128, 64};
  bool r_mix_layernorm = true;
};

struct FeatureRows {
  RowVector transition;  // 1 x D_T
  RowVector reward;      // 1 x D_R
};

/// Shared state/action feature nets feeding a transition mixture net
/// (state ++ action features) and a reward mixture net (state ++ action ++
/// next-state features). The state feature net is one instance applied to
/// both s and s'.
class BasisNets {
 public:
  BasisNets() = default;
  BasisNets(BasisConfig cfg, Rng& rng);

  const BasisConfig& config() const { return cfg_; }

  /// C_T (N x D_T) and C_R (N x D_R) without recording a tape.
  std::pair<Matrix, Matrix> eval(const ContextBatch& batch) const;
  FeatureRows eval_row(const RowVector& s, const RowVector& a, const RowVector& s_next) const;

  std::vector<Matrix*> params();
  std::vector<const Matrix*> params() const;
  std::size_t param_count() const;

  const nn::MLP& s_feat() const { return s_feat_; }
  const nn::MLP& a_feat() const { return a_feat_; }
  const nn::MLP& t_mix() const { return t_mix_; }
  const nn::MLP& r_mix() const { return r_mix_; }

 private:
  BasisConfig cfg_;
  nn::MLP s_feat_, a_feat_, t_mix_, r_mix_;
};

BasisNets init_networks(const BasisConfig& cfg, Rng& rng);

struct FeatureVars {
  ad::Var transition;
  ad::Var reward;
  std::vector<ad::Var> leaves;  // one per BasisNets::params() entry, same order
};

FeatureVars forward_features(const BasisNets& nets, const ContextBatch& batch, ad::Tape& tape);

struct ModelLossConfig {
  double lambda_t = 5e-3;
  double lambda_r = 1e-3;
  bool regularization = true;
  bool known_noise = false;
};

/// Fixed per-task priors for both model blocks. The known-noise pair is
/// used when ModelLossConfig::known_noise is set.
struct ModelPriors {
  NWBelief transition;
  NWBelief reward;
  KnownNoiseBelief transition_known;
  KnownNoiseBelief reward_known;

  static ModelPriors from(NWBelief transition, NWBelief reward);
};

/// -marginal_ll_reduced(prior, c, y) recorded on the tape, differentiable in c.
ad::Var neg_marginal_ll_reduced(ad::Tape& tape, ad::Var c, const Matrix& y,
                                const NWBelief& prior);
/// -known_noise_marginal_ll(prior, c, y) recorded on the tape.
ad::Var neg_known_noise_marginal_ll(ad::Tape& tape, ad::Var c, const Matrix& y,
                                    const KnownNoiseBelief& prior);

struct ModelLoss {
  ad::Var loss;
  std::vector<ad::Var> leaves;
};

/// Mean over tasks of the negative reduced marginal log-likelihood of both
/// blocks plus the squared-Frobenius feature penalties.
ModelLoss model_loss(const BasisNets& nets, const ModelPriors& priors,
                     const std::vector<ContextBatch>& tasks, const ModelLossConfig& cfg,
                     ad::Tape& tape);

struct LossAndGrads {
  double loss = 0.0;
  std::vector<Matrix> grads;
};
LossAndGrads model_loss_and_grads(const BasisNets& nets, const ModelPriors& priors,
                                  const std::vector<ContextBatch>& tasks,
                                  const ModelLossConfig& cfg);

struct TrainMetrics {
  double loss = 0.0;
  double grad_norm = 0.0;
};

/// One Adam step on the model loss. Throws NonFiniteGradient without
/// touching the parameters.
TrainMetrics train_step(BasisNets& nets, nn::Adam& opt, const ModelPriors& priors,
                        const std::vector<ContextBatch>& tasks, const ModelLossConfig& cfg);

}  // namespace nwbrl
