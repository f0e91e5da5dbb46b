#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nwbrl/autodiff.hpp"
#include "nwbrl/linalg.hpp"
#include "nwbrl/random.hpp"

namespace nwbrl::nn {

enum class Activation { ReLU, Tanh };

enum class Init {
  VarianceScalingFanIn,  // N(0, 2 / fan_in)
  XavierUniform,         // U(-a, a), a = sqrt(6 / (fan_in + fan_out))
};

struct MLPSpec {
  Index in = 0;
  std::vector<Index> hidden;
  Index out = 0;
  Activation activation = Activation::ReLU;
  bool layer_norm = false;      // after each hidden linear layer
  bool out_activation = false;  // activation on the output layer
};

struct Linear {
  Matrix W;  // in x out
  Matrix b;  // 1 x out
};

inline constexpr double kLayerNormEps = 1e-5;

/// Feed-forward net: [Linear -> (LayerNorm) -> act]* -> Linear (-> act).
class MLP {
 public:
  MLP() = default;
  MLP(MLPSpec spec, Init init, Rng& rng);

  const MLPSpec& spec() const { return spec_; }
  Index in_dim() const { return spec_.in; }
  Index out_dim() const { return spec_.out; }

  /// Plain evaluation; rows of x are samples.
  Matrix eval(const Matrix& x) const;
  /// Records the same computation on `tape`, appending one leaf per
  /// parameter matrix (in params() order) to `leaves`.
  ad::Var forward(ad::Tape& tape, ad::Var x, std::vector<ad::Var>& leaves) const;

  std::vector<Matrix*> params();
  std::vector<const Matrix*> params() const;
  std::size_t param_count() const;

 private:
  MLPSpec spec_;
  std::vector<Linear> layers_;
};

/// Adam with optional global gradient-norm clipping.
class Adam {
 public:
  explicit Adam(double lr, std::optional<double> max_grad_norm = std::nullopt,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Applies one update; returns the gradient norm before clipping.
  double step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads);

  double lr() const { return lr_; }
  long steps() const { return t_; }

 private:
  double lr_;
  std::optional<double> max_norm_;
  double b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

double global_norm(const std::vector<Matrix>& grads);

}  // namespace nwbrl::nn
