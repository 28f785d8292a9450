#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace blendrig {

// Fully-connected network with ReLU on hidden layers and a linear output.
// All weights and biases live in one flat vector so they can be handed to an
// optimizer as a single tensor. Inputs are batched column-wise.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> layerSizes);

  int inputSize() const { return sizes_.front(); }
  int outputSize() const { return sizes_.back(); }
  int layerCount() const { return static_cast<int>(sizes_.size()) - 1; }
  const std::vector<int>& layerSizes() const { return sizes_; }

  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }

  Eigen::Map<Eigen::MatrixXd> weight(int layer);
  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<Eigen::VectorXd> bias(int layer);
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;

  // Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero biases.
  void initializeHe(std::uint64_t seed);

  struct Cache {
    // activations[0] is the input; activations[l] the post-ReLU output of layer l.
    std::vector<Eigen::MatrixXd> activations;
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Cache* cache = nullptr) const;

  // Accumulates parameter gradients into `paramGrad` (resized if empty) and
  // returns the gradient w.r.t. the input.
  Eigen::MatrixXd backward(const Cache& cache,
                           const Eigen::MatrixXd& outputGrad,
                           Eigen::VectorXd& paramGrad) const;

 private:
  std::vector<int> sizes_;
  std::vector<Eigen::Index> weightOffsets_;
  std::vector<Eigen::Index> biasOffsets_;
  Eigen::VectorXd params_;
};

}  // namespace blendrig
