#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace blendrig {

struct AdamHyperparameters {
  double learningRate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

enum class OptimizerKind : std::uint8_t { Adam = 0, AdamUniform = 1 };

// Moment buffers for one parameter tensor. For AdamUniform `secondMoment` has a
// single entry shared by every coordinate.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  AdamHyperparameters hyper;
  std::int64_t step = 0;
  Eigen::VectorXd firstMoment;
  Eigen::VectorXd secondMoment;

  static OptimizerState create(OptimizerKind kind, Eigen::Index size, const AdamHyperparameters& hyper);
};

// Both steps throw NumericalError on a non-finite gradient and InputError on a
// size mismatch. Parameters are updated in place.
void adamStep(OptimizerState& state,
              Eigen::Ref<Eigen::VectorXd> params,
              const Eigen::Ref<const Eigen::VectorXd>& grads);

// First moment per coordinate; second moment v = beta2 v + (1 - beta2) max_i g_i^2,
// so every coordinate is divided by the same sqrt(v_hat) + eps.
void adamUniformStep(OptimizerState& state,
                     Eigen::Ref<Eigen::VectorXd> params,
                     const Eigen::Ref<const Eigen::VectorXd>& grads);

// Dispatches on state.kind.
void optimizerStep(OptimizerState& state,
                   Eigen::Ref<Eigen::VectorXd> params,
                   const Eigen::Ref<const Eigen::VectorXd>& grads);

}  // namespace blendrig
