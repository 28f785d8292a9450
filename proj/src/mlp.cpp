#include "blendrig/mlp.h"

#include "blendrig/error.h"

#include <cmath>
#include <random>

namespace blendrig {

Mlp::Mlp(std::vector<int> layerSizes) : sizes_(std::move(layerSizes)) {
  if (sizes_.size() < 2) {
    throw InputError("an MLP needs at least an input and an output size");
  }
  Eigen::Index offset = 0;
  for (int l = 0; l < layerCount(); ++l) {
    weightOffsets_.push_back(offset);
    offset += static_cast<Eigen::Index>(sizes_[static_cast<size_t>(l) + 1]) * sizes_[static_cast<size_t>(l)];
    biasOffsets_.push_back(offset);
    offset += sizes_[static_cast<size_t>(l) + 1];
  }
  params_ = Eigen::VectorXd::Zero(offset);
}

Eigen::Map<Eigen::MatrixXd> Mlp::weight(int layer) {
  const auto l = static_cast<size_t>(layer);
  return {params_.data() + weightOffsets_[l], sizes_[l + 1], sizes_[l]};
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(int layer) const {
  const auto l = static_cast<size_t>(layer);
  return {params_.data() + weightOffsets_[l], sizes_[l + 1], sizes_[l]};
}

Eigen::Map<Eigen::VectorXd> Mlp::bias(int layer) {
  const auto l = static_cast<size_t>(layer);
  return {params_.data() + biasOffsets_[l], sizes_[l + 1]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(int layer) const {
  const auto l = static_cast<size_t>(layer);
  return {params_.data() + biasOffsets_[l], sizes_[l + 1]};
}

void Mlp::initializeHe(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (int l = 0; l < layerCount(); ++l) {
    const double bound = std::sqrt(6.0 / sizes_[static_cast<size_t>(l)]);
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto w = weight(l);
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      w.data()[k] = dist(rng);
    }
    bias(l).setZero();
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input, Cache* cache) const {
  if (input.rows() != inputSize()) {
    throw InputError(detail::concat("MLP expects ", inputSize(), " inputs, got ", input.rows()));
  }
  if (cache != nullptr) {
    cache->activations.clear();
    cache->activations.push_back(input);
  }
  Eigen::MatrixXd a = input;
  for (int l = 0; l < layerCount(); ++l) {
    Eigen::MatrixXd z = weight(l) * a;
    z.colwise() += bias(l);
    if (l + 1 < layerCount()) {
      z = z.cwiseMax(0.0);
    }
    a = std::move(z);
    if (cache != nullptr && l + 1 < layerCount()) {
      cache->activations.push_back(a);
    }
  }
  return a;
}

Eigen::MatrixXd Mlp::backward(const Cache& cache,
                              const Eigen::MatrixXd& outputGrad,
                              Eigen::VectorXd& paramGrad) const {
  if (static_cast<int>(cache.activations.size()) != layerCount()) {
    throw InputError("MLP backward called without a matching forward cache");
  }
  if (paramGrad.size() == 0) {
    paramGrad = Eigen::VectorXd::Zero(params_.size());
  }
  Eigen::MatrixXd delta = outputGrad;
  for (int l = layerCount() - 1; l >= 0; --l) {
    const auto sl = static_cast<size_t>(l);
    const Eigen::MatrixXd& a = cache.activations[sl];
    Eigen::Map<Eigen::MatrixXd>(paramGrad.data() + weightOffsets_[sl], sizes_[sl + 1], sizes_[sl])
        .noalias() += delta * a.transpose();
    Eigen::Map<Eigen::VectorXd>(paramGrad.data() + biasOffsets_[sl], sizes_[sl + 1]) +=
        delta.rowwise().sum();
    Eigen::MatrixXd prev = weight(l).transpose() * delta;
    if (l > 0) {
      prev = prev.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
    }
    delta = std::move(prev);
  }
  return delta;
}

}  // namespace blendrig
