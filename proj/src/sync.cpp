#include "blendrig/sync.h"

#include "blendrig/error.h"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <random>

namespace blendrig {

double frameTime(const FrameClock& clock, int frameIndex) {
  return clock.startTime + static_cast<double>(frameIndex) / clock.frameRate;
}

double TimeNormalizer::normalize(double seconds, bool* outOfRange) const {
  const double span = maxTime - minTime;
  double t = span > 0.0 ? (seconds - minTime) / span : 0.0;
  if (outOfRange != nullptr) {
    *outOfRange = seconds < minTime - slack || seconds > maxTime + slack;
  }
  return std::clamp(t, 0.0, 1.0);
}

TimeGrid::TimeGrid(const TimeGridConfig& config) : config_(config) {
  if (config.levels <= 0 || config.baseResolution < 2 || config.channels <= 0 ||
      !(config.growthFactor >= 1.0)) {
    throw InputError("invalid time grid configuration");
  }
  Eigen::Index offset = 0;
  for (int l = 0; l < config.levels; ++l) {
    const int res = static_cast<int>(
        std::ceil(config.baseResolution * std::pow(config.growthFactor, static_cast<double>(l)) - 1e-9));
    resolutions_.push_back(res);
    offsets_.push_back(offset);
    offset += static_cast<Eigen::Index>(res) * config.channels;
  }
  featureCount_ = offset;
}

Eigen::Index TimeGrid::offset(int level, int node) const {
  return offsets_[static_cast<size_t>(level)] + static_cast<Eigen::Index>(node) * config_.channels;
}

void TimeGrid::initializeUniform(std::uint64_t seed, double bound) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  features_.resize(featureCount_);
  for (Eigen::Index k = 0; k < features_.size(); ++k) {
    features_(k) = dist(rng);
  }
}

TimeGrid::Stencil TimeGrid::stencil(double normalizedTime) const {
  const double t = std::clamp(normalizedTime, 0.0, 1.0);
  Stencil s;
  for (int l = 0; l < config_.levels; ++l) {
    const int res = resolution(l);
    const double x = t * (res - 1);
    int lo = static_cast<int>(std::floor(x));
    lo = std::clamp(lo, 0, res - 2);
    s.lower.push_back(lo);
    s.weight.push_back(x - lo);
  }
  return s;
}

Eigen::VectorXd TimeGrid::encode(double normalizedTime) const {
  if (!initialized()) {
    throw InputError("time grid is not initialized");
  }
  const Stencil s = stencil(normalizedTime);
  const int c = config_.channels;
  Eigen::VectorXd out(featureDimension());
  for (int l = 0; l < config_.levels; ++l) {
    const auto sl = static_cast<size_t>(l);
    const double w = s.weight[sl];
    const auto a = features_.segment(offset(l, s.lower[sl]), c);
    const auto b = features_.segment(offset(l, s.lower[sl] + 1), c);
    out.segment(static_cast<Eigen::Index>(l) * c, c) = (1.0 - w) * a + w * b;
  }
  return out;
}

void TimeGrid::encodeBackward(double normalizedTime,
                              const Eigen::VectorXd& featureGrad,
                              Eigen::VectorXd& gridGrad) const {
  if (gridGrad.size() != features_.size()) {
    gridGrad = Eigen::VectorXd::Zero(features_.size());
  }
  const Stencil s = stencil(normalizedTime);
  const int c = config_.channels;
  for (int l = 0; l < config_.levels; ++l) {
    const auto sl = static_cast<size_t>(l);
    const double w = s.weight[sl];
    const auto g = featureGrad.segment(static_cast<Eigen::Index>(l) * c, c);
    gridGrad.segment(offset(l, s.lower[sl]), c) += (1.0 - w) * g;
    gridGrad.segment(offset(l, s.lower[sl] + 1), c) += w * g;
  }
}

namespace {

constexpr double kDegenerateNorm = 1e-9;

}  // namespace

Eigen::Matrix3d rotationFrom6d(const Eigen::Matrix<double, 6, 1>& v, bool* degenerate) {
  const Eigen::Vector3d a1 = v.head<3>();
  const Eigen::Vector3d a2 = v.tail<3>();
  const double n1 = a1.norm();
  bool bad = !(n1 > kDegenerateNorm);
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  if (!bad) {
    const Eigen::Vector3d b1 = a1 / n1;
    const Eigen::Vector3d u2 = a2 - b1.dot(a2) * b1;
    const double n2 = u2.norm();
    if (n2 > kDegenerateNorm * std::max(1.0, a2.norm())) {
      const Eigen::Vector3d b2 = u2 / n2;
      r.col(0) = b1;
      r.col(1) = b2;
      r.col(2) = b1.cross(b2);
    } else {
      bad = true;
    }
  }
  if (degenerate != nullptr) {
    *degenerate = bad;
  }
  return r;
}

Eigen::Matrix<double, 6, 1> rotationFrom6dBackward(const Eigen::Matrix<double, 6, 1>& v,
                                                   const Eigen::Matrix3d& gradR) {
  Eigen::Matrix<double, 6, 1> out = Eigen::Matrix<double, 6, 1>::Zero();
  bool degenerate = false;
  const Eigen::Matrix3d r = rotationFrom6d(v, &degenerate);
  if (degenerate) {
    return out;
  }
  const Eigen::Vector3d a1 = v.head<3>();
  const Eigen::Vector3d a2 = v.tail<3>();
  const Eigen::Vector3d b1 = r.col(0);
  const Eigen::Vector3d b2 = r.col(1);
  const double n1 = a1.norm();
  const double n2 = (a2 - b1.dot(a2) * b1).norm();
  const Eigen::Vector3d g3 = gradR.col(2);

  Eigen::Vector3d gb1 = gradR.col(0) + b2.cross(g3);
  const Eigen::Vector3d gb2 = gradR.col(1) + g3.cross(b1);
  const Eigen::Vector3d gu2 = (gb2 - b2 * b2.dot(gb2)) / n2;
  const Eigen::Vector3d ga2 = gu2 - b1 * b1.dot(gu2);
  gb1 -= b1.dot(a2) * gu2 + a2 * b1.dot(gu2);
  const Eigen::Vector3d ga1 = (gb1 - b1 * b1.dot(gb1)) / n1;
  out.head<3>() = ga1;
  out.tail<3>() = ga2;
  return out;
}

void SyncGradients::resize(Eigen::Index gridSize, Eigen::Index headSize) {
  grid = Eigen::VectorXd::Zero(gridSize);
  head = Eigen::VectorXd::Zero(headSize);
}

void SyncGradients::setZero() {
  grid.setZero();
  head.setZero();
}

SyncRegressor::SyncRegressor(const TimeGridConfig& gridConfig, int hiddenUnits, int basisCount)
    : grid_(gridConfig),
      head_({gridConfig.levels * gridConfig.channels, hiddenUnits, hiddenUnits, 9 + basisCount}),
      basisCount_(basisCount) {}

void SyncRegressor::initialize(std::uint64_t seed) {
  grid_.initializeUniform(seed);
  head_.initializeHe(seed ^ 0x9e3779b97f4a7c15ULL);
  const int last = head_.layerCount() - 1;
  head_.weight(last).setZero();
  auto b = head_.bias(last);
  b.setZero();
  b(0) = 1.0;
  b(4) = 1.0;
}

MotionParameters SyncRegressor::forward(double normalizedTime, Cache* cache) const {
  const Eigen::VectorXd features = grid_.encode(normalizedTime);
  Mlp::Cache local;
  const Eigen::VectorXd out = head_.forward(features, cache != nullptr ? &cache->head : &local).col(0);
  MotionParameters motion;
  motion.rotation = rotationFrom6d(out.head<6>(), &motion.degenerateRotation);
  motion.translation = out.segment<3>(6);
  motion.beta = out.tail(basisCount_);
  if (clampBeta) {
    motion.beta = motion.beta.cwiseMax(0.0).cwiseMin(1.0);
  }
  if (cache != nullptr) {
    cache->normalizedTime = normalizedTime;
    cache->rawOutput = out;
    cache->valid = true;
  }
  return motion;
}

void SyncRegressor::backward(const Cache& cache,
                             const Eigen::Matrix3d& gradRotation,
                             const Eigen::Vector3d& gradTranslation,
                             const Eigen::VectorXd& gradBeta,
                             SyncGradients& grads) const {
  if (!cache.valid) {
    throw InputError("sync backward called without a forward cache");
  }
  if (grads.grid.size() != grid_.features().size() || grads.head.size() != head_.parameters().size()) {
    grads.resize(grid_.features().size(), head_.parameters().size());
  }
  Eigen::VectorXd outGrad(head_.outputSize());
  outGrad.head<6>() = rotationFrom6dBackward(cache.rawOutput.head<6>(), gradRotation);
  outGrad.segment<3>(6) = gradTranslation;
  for (int j = 0; j < basisCount_; ++j) {
    const double raw = cache.rawOutput(9 + j);
    double g = gradBeta(j);
    if (clampBeta && ((raw < 0.0 && g > 0.0) || (raw > 1.0 && g < 0.0))) {
      g = 0.0;
    }
    outGrad(9 + j) = g;
  }
  const Eigen::VectorXd featureGrad = head_.backward(cache.head, outGrad, grads.head).col(0);
  grid_.encodeBackward(cache.normalizedTime, featureGrad, grads.grid);
}

}  // namespace blendrig
