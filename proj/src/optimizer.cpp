#include "blendrig/optimizer.h"

#include "blendrig/error.h"

#include <cmath>

namespace blendrig {

namespace {

void checkInputs(const OptimizerState& state,
                 const Eigen::Ref<Eigen::VectorXd>& params,
                 const Eigen::Ref<const Eigen::VectorXd>& grads) {
  if (params.size() != grads.size() || params.size() != state.firstMoment.size()) {
    throw InputError(detail::concat("optimizer size mismatch: params ", params.size(), ", grads ",
                                    grads.size(), ", state ", state.firstMoment.size()));
  }
  if (!grads.allFinite()) {
    throw NumericalError("non-finite gradient passed to optimizer");
  }
}

}  // namespace

OptimizerState OptimizerState::create(OptimizerKind kind,
                                      Eigen::Index size,
                                      const AdamHyperparameters& hyper) {
  OptimizerState state;
  state.kind = kind;
  state.hyper = hyper;
  state.firstMoment = Eigen::VectorXd::Zero(size);
  state.secondMoment = Eigen::VectorXd::Zero(kind == OptimizerKind::Adam ? size : 1);
  return state;
}

void adamStep(OptimizerState& state,
              Eigen::Ref<Eigen::VectorXd> params,
              const Eigen::Ref<const Eigen::VectorXd>& grads) {
  checkInputs(state, params, grads);
  const auto& h = state.hyper;
  ++state.step;
  state.firstMoment = h.beta1 * state.firstMoment + (1.0 - h.beta1) * grads;
  state.secondMoment =
      h.beta2 * state.secondMoment + (1.0 - h.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  params.array() -= h.learningRate * (state.firstMoment.array() / c1) /
                    ((state.secondMoment.array() / c2).sqrt() + h.epsilon);
}

void adamUniformStep(OptimizerState& state,
                     Eigen::Ref<Eigen::VectorXd> params,
                     const Eigen::Ref<const Eigen::VectorXd>& grads) {
  checkInputs(state, params, grads);
  const auto& h = state.hyper;
  ++state.step;
  const double gmax = grads.size() > 0 ? grads.cwiseAbs().maxCoeff() : 0.0;
  state.firstMoment = h.beta1 * state.firstMoment + (1.0 - h.beta1) * grads;
  state.secondMoment(0) = h.beta2 * state.secondMoment(0) + (1.0 - h.beta2) * gmax * gmax;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const double denom = std::sqrt(state.secondMoment(0) / c2) + h.epsilon;
  params -= (h.learningRate / (c1 * denom)) * state.firstMoment;
}

void optimizerStep(OptimizerState& state,
                   Eigen::Ref<Eigen::VectorXd> params,
                   const Eigen::Ref<const Eigen::VectorXd>& grads) {
  if (state.kind == OptimizerKind::Adam) {
    adamStep(state, params, grads);
  } else {
    adamUniformStep(state, params, grads);
  }
}

}  // namespace blendrig
