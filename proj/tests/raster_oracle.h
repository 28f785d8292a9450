#pragma once

#include "blendrig/render.h"

#include <Eigen/LU>

#include <cstdint>
#include <limits>
#include <random>

namespace blendrig::testing {

struct RasterScene {
  ScreenVertices screen;
  Faces faces;
};

// Random screen-space triangle soup for a `size` x `size` image: vertices a
// little beyond the frame, depths in [0.5, 5], and about one face in twenty
// with a vertex behind the camera.
inline RasterScene randomRasterScene(std::uint64_t seed, int size = 32) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count(4, 24);
  std::uniform_real_distribution<double> xy(-0.15 * size, 1.15 * size);
  std::uniform_real_distribution<double> z(0.5, 5.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int faces = count(rng);
  RasterScene s;
  s.screen.pixel.resize(3 * faces, 2);
  s.screen.depth.resize(3 * faces);
  s.faces.resize(faces, 3);
  for (int f = 0; f < faces; ++f) {
    for (int k = 0; k < 3; ++k) {
      const int v = 3 * f + k;
      s.screen.pixel.row(v) << xy(rng), xy(rng);
      s.screen.depth(v) = z(rng);
    }
    if (unit(rng) < 0.05) {
      s.screen.depth(3 * f) = -0.2;
    }
    s.faces.row(f) << 3 * f, 3 * f + 1, 3 * f + 2;
  }
  return s;
}

// Per-pixel loop over every triangle. Screen barycentrics come from a 2x2
// solve, depth from interpolated reciprocal depth; nearest wins, and an equal
// depth keeps the earlier (lower) face id.
inline RasterOutput bruteForceRaster(const ScreenVertices& screen, const Faces& faces, int width, int height) {
  RasterOutput out;
  out.width = width;
  out.height = height;
  const auto count = static_cast<size_t>(width) * height;
  out.faceId.assign(count, -1);
  out.barycentric.assign(count, Eigen::Vector3d::Zero());
  out.depth.assign(count, std::numeric_limits<double>::infinity());
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      const Eigen::Vector2d p(col + 0.5, row + 0.5);
      const auto idx = static_cast<size_t>(row) * width + col;
      for (Eigen::Index f = 0; f < faces.rows(); ++f) {
        const Eigen::Vector3i t = faces.row(f).transpose();
        if (screen.depth(t(0)) <= kMinDepth || screen.depth(t(1)) <= kMinDepth || screen.depth(t(2)) <= kMinDepth) {
          continue;
        }
        Eigen::Matrix2d a;
        a.col(0) = (screen.pixel.row(t(1)) - screen.pixel.row(t(0))).transpose();
        a.col(1) = (screen.pixel.row(t(2)) - screen.pixel.row(t(0))).transpose();
        if (std::abs(a.determinant()) < 1e-12) {
          continue;
        }
        const Eigen::Vector2d l12 = a.inverse() * (p - screen.pixel.row(t(0)).transpose());
        const Eigen::Vector3d lambda(1.0 - l12.sum(), l12(0), l12(1));
        if (lambda.minCoeff() < 0.0) {
          continue;
        }
        const Eigen::Vector3d w(lambda(0) / screen.depth(t(0)), lambda(1) / screen.depth(t(1)),
                                lambda(2) / screen.depth(t(2)));
        const double depth = 1.0 / w.sum();
        if (depth < out.depth[idx]) {
          out.depth[idx] = depth;
          out.faceId[idx] = static_cast<int>(f);
          out.barycentric[idx] = w / w.sum();
        }
      }
    }
  }
  return out;
}

struct RasterComparison {
  int idMismatches = 0;
  double maxBarycentricError = 0.0;
  double maxBarycentricSumError = 0.0;
  bool nonPositiveDepth = false;
};

inline RasterComparison compareRasters(const RasterOutput& a, const RasterOutput& oracle) {
  RasterComparison c;
  for (size_t i = 0; i < a.faceId.size(); ++i) {
    if (a.faceId[i] != oracle.faceId[i]) {
      ++c.idMismatches;
      continue;
    }
    if (a.faceId[i] >= 0) {
      c.maxBarycentricError = std::max(c.maxBarycentricError, (a.barycentric[i] - oracle.barycentric[i]).cwiseAbs().maxCoeff());
      c.maxBarycentricSumError = std::max(c.maxBarycentricSumError, std::abs(a.barycentric[i].sum() - 1.0));
      c.nonPositiveDepth = c.nonPositiveDepth || !(a.depth[i] > 0.0);
    }
  }
  return c;
}

}  // namespace blendrig::testing
