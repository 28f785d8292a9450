#pragma once

#include "blendrig/mesh.h"
#include "blendrig/rig.h"

#include <Eigen/Core>

#include <filesystem>
#include <vector>

namespace blendrig {

// Pinhole camera; `rotation`/`translation` map world to camera coordinates.
// Pixel (col, row) has its center at (col + 0.5, row + 0.5). Inputs are
// assumed undistorted.
struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  int width = 0;
  int height = 0;
  int view = 0;

  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  void validate() const;
};

inline constexpr double kMinDepth = 1e-6;

struct Projection {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double depth = 0.0;
  // False for points with depth <= kMinDepth.
  bool valid = false;
};

Projection project(const Camera& camera, const Eigen::Vector3d& world);

// d(u, v, depth) / d(world point).
Eigen::Matrix3d projectJacobian(const Camera& camera, const Eigen::Vector3d& world);

Positions embedLandmarks(const Positions& surface,
                         const Faces& faces,
                         const std::vector<LandmarkAnchor>& anchors);

// Scatters per-landmark gradients (L x 3) onto the surface vertices.
void embedLandmarksBackward(const Faces& faces,
                            const std::vector<LandmarkAnchor>& anchors,
                            const Positions& landmarkGrad,
                            Positions& surfaceGrad);

struct LandmarkObservation {
  Eigen::MatrixX2d points;   // pixels
  Eigen::VectorXd weights;   // confidences in [0, 1]
};

// (1 / N_visible) sum_i w_i |projected_i - detected_i|_1 over visible
// landmarks. Throws InputError when nothing is visible.
double landmarkLoss(const Eigen::MatrixX2d& projected,
                    const std::vector<bool>& visible,
                    const LandmarkObservation& observed,
                    Eigen::MatrixX2d* grad = nullptr);

// Text formats:
//   camera: "fx fy cx cy" / 9 numbers of R (row-major) / 3 numbers of t / "width height"
//   landmarks: one "id u v confidence" record per line
Camera loadCamera(const std::filesystem::path& path);
void saveCamera(const Camera& camera, const std::filesystem::path& path);
LandmarkObservation loadLandmarks(const std::filesystem::path& path, int expectedCount);
void saveLandmarks(const LandmarkObservation& obs, const std::filesystem::path& path);

}  // namespace blendrig
