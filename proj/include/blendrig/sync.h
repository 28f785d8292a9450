#pragma once

#include "blendrig/mlp.h"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace blendrig {

// Per-view capture clock: frame i was taken at start + i / rate (seconds).
struct FrameClock {
  double startTime = 0.0;
  double frameRate = 30.0;
};

double frameTime(const FrameClock& clock, int frameIndex);

// Affine map from wall-clock seconds onto [0, 1] over the capture span.
struct TimeNormalizer {
  double minTime = 0.0;
  double maxTime = 1.0;
  // Out-of-range times are clamped; anything beyond this slack is reported.
  double slack = 0.0;

  double normalize(double seconds, bool* outOfRange = nullptr) const;
};

struct TimeGridConfig {
  int levels = 6;
  int baseResolution = 8;
  int channels = 4;
  double growthFactor = 2.0;
};

// Dense multiresolution 1-D feature grid. Level l has ceil(base * growth^l)
// nodes spread uniformly over [0, 1]; features of all levels live in one flat
// vector (level-major, then node, then channel).
class TimeGrid {
 public:
  TimeGrid() = default;
  explicit TimeGrid(const TimeGridConfig& config);

  const TimeGridConfig& config() const { return config_; }
  int resolution(int level) const { return resolutions_[static_cast<size_t>(level)]; }
  int featureDimension() const { return config_.levels * config_.channels; }
  // Length of the flat feature vector once initialized.
  Eigen::Index featureCount() const { return featureCount_; }
  bool initialized() const { return features_.size() > 0; }

  Eigen::VectorXd& features() { return features_; }
  const Eigen::VectorXd& features() const { return features_; }

  // Offset of (level, node, channel 0) in the flat feature vector.
  Eigen::Index offset(int level, int node) const;

  void initializeUniform(std::uint64_t seed, double bound = 1e-4);

  // Per level, the two bracketing nodes and the weight of the upper one.
  struct Stencil {
    std::vector<int> lower;
    std::vector<double> weight;
  };
  Stencil stencil(double normalizedTime) const;

  Eigen::VectorXd encode(double normalizedTime) const;

  // Scatters the feature-space gradient onto the bracketing nodes.
  void encodeBackward(double normalizedTime,
                      const Eigen::VectorXd& featureGrad,
                      Eigen::VectorXd& gridGrad) const;

 private:
  TimeGridConfig config_;
  std::vector<int> resolutions_;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index featureCount_ = 0;
  Eigen::VectorXd features_;  // empty until initialized
};

// Gram-Schmidt on the two 3-vectors; the third column is their cross product.
// Degenerate input (near-zero or collinear) yields the identity.
Eigen::Matrix3d rotationFrom6d(const Eigen::Matrix<double, 6, 1>& v, bool* degenerate = nullptr);

// Gradient of a loss w.r.t. the 6-vector given its gradient w.r.t. R.
Eigen::Matrix<double, 6, 1> rotationFrom6dBackward(const Eigen::Matrix<double, 6, 1>& v,
                                                   const Eigen::Matrix3d& gradR);

struct MotionParameters {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::VectorXd beta;
  bool degenerateRotation = false;
};

struct SyncGradients {
  Eigen::VectorXd grid;
  Eigen::VectorXd head;

  void resize(Eigen::Index gridSize, Eigen::Index headSize);
  void setZero();
};

// Timestamp -> (rotation, translation, expression coefficients).
// Head outputs: [0, 6) continuous 6D rotation, [6, 9) translation (meters),
// [9, 9 + M) expression coefficients.
class SyncRegressor {
 public:
  SyncRegressor() = default;
  SyncRegressor(const TimeGridConfig& gridConfig, int hiddenUnits, int basisCount);

  // Grid features uniform in [-1e-4, 1e-4]; hidden layers He-initialized; the
  // output layer has zero weights and a bias encoding the identity rotation.
  void initialize(std::uint64_t seed);

  int basisCount() const { return basisCount_; }
  TimeGrid& grid() { return grid_; }
  const TimeGrid& grid() const { return grid_; }
  Mlp& head() { return head_; }
  const Mlp& head() const { return head_; }

  bool clampBeta = true;

  struct Cache {
    double normalizedTime = 0.0;
    Mlp::Cache head;
    Eigen::VectorXd rawOutput;
    bool valid = false;
  };

  MotionParameters forward(double normalizedTime, Cache* cache = nullptr) const;

  // Accumulates into `grads`. Clamped coefficients pass gradient only when it
  // points back into [0, 1].
  void backward(const Cache& cache,
                const Eigen::Matrix3d& gradRotation,
                const Eigen::Vector3d& gradTranslation,
                const Eigen::VectorXd& gradBeta,
                SyncGradients& grads) const;

 private:
  TimeGrid grid_;
  Mlp head_;
  int basisCount_ = 0;
};

}  // namespace blendrig
