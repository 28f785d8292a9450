#include "blendrig/camera.h"

#include "blendrig/error.h"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace blendrig {

void Camera::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) {
    throw InputError("camera focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw InputError("camera image size must be positive");
  }
  const double orthoErr = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm();
  if (!(orthoErr < 1e-6) || !(rotation.determinant() > 0.0)) {
    throw InputError("camera rotation must be orthonormal with det +1");
  }
}

Projection project(const Camera& camera, const Eigen::Vector3d& world) {
  const Eigen::Vector3d c = camera.rotation * world + camera.translation;
  Projection p;
  p.depth = c.z();
  if (!(c.z() > kMinDepth)) {
    return p;
  }
  p.pixel = Eigen::Vector2d(camera.fx * c.x() / c.z() + camera.cx, camera.fy * c.y() / c.z() + camera.cy);
  p.valid = true;
  return p;
}

Eigen::Matrix3d projectJacobian(const Camera& camera, const Eigen::Vector3d& world) {
  const Eigen::Vector3d c = camera.rotation * world + camera.translation;
  const double iz = 1.0 / c.z();
  Eigen::Matrix3d dProj;
  dProj << camera.fx * iz, 0.0, -camera.fx * c.x() * iz * iz,
      0.0, camera.fy * iz, -camera.fy * c.y() * iz * iz,
      0.0, 0.0, 1.0;
  return dProj * camera.rotation;
}

Positions embedLandmarks(const Positions& surface,
                         const Faces& faces,
                         const std::vector<LandmarkAnchor>& anchors) {
  Positions out(static_cast<Eigen::Index>(anchors.size()), 3);
  for (size_t i = 0; i < anchors.size(); ++i) {
    const auto& a = anchors[i];
    if (a.face < 0 || a.face >= faces.rows()) {
      throw InputError(detail::concat("landmark anchor face ", a.face, " out of range"));
    }
    const auto f = faces.row(a.face);
    out.row(static_cast<Eigen::Index>(i)) = a.barycentric(0) * surface.row(f(0)) +
                                            a.barycentric(1) * surface.row(f(1)) +
                                            a.barycentric(2) * surface.row(f(2));
  }
  return out;
}

void embedLandmarksBackward(const Faces& faces,
                            const std::vector<LandmarkAnchor>& anchors,
                            const Positions& landmarkGrad,
                            Positions& surfaceGrad) {
  for (size_t i = 0; i < anchors.size(); ++i) {
    const auto& a = anchors[i];
    const auto f = faces.row(a.face);
    for (int k = 0; k < 3; ++k) {
      surfaceGrad.row(f(k)) += a.barycentric(k) * landmarkGrad.row(static_cast<Eigen::Index>(i));
    }
  }
}

double landmarkLoss(const Eigen::MatrixX2d& projected,
                    const std::vector<bool>& visible,
                    const LandmarkObservation& observed,
                    Eigen::MatrixX2d* grad) {
  const auto n = projected.rows();
  if (observed.points.rows() != n || observed.weights.size() != n ||
      static_cast<Eigen::Index>(visible.size()) != n) {
    throw InputError("landmark loss: count mismatch");
  }
  int count = 0;
  for (bool v : visible) {
    count += v ? 1 : 0;
  }
  if (count == 0) {
    throw InputError("landmark loss: no visible landmarks");
  }
  if (grad != nullptr) {
    grad->setZero(n, 2);
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!visible[static_cast<size_t>(i)]) {
      continue;
    }
    const Eigen::Vector2d d = projected.row(i) - observed.points.row(i);
    const double w = observed.weights(i);
    sum += w * d.cwiseAbs().sum();
    if (grad != nullptr) {
      for (int k = 0; k < 2; ++k) {
        (*grad)(i, k) = d(k) > 0.0 ? w : (d(k) < 0.0 ? -w : 0.0);
      }
    }
  }
  if (grad != nullptr) {
    *grad /= count;
  }
  return sum / count;
}

Camera loadCamera(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open camera file " + path.string());
  }
  Camera cam;
  if (!(in >> cam.fx >> cam.fy >> cam.cx >> cam.cy)) {
    throw InputError(path.string() + ": malformed intrinsics");
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (!(in >> cam.rotation(r, c))) {
        throw InputError(path.string() + ": malformed rotation");
      }
    }
  }
  if (!(in >> cam.translation.x() >> cam.translation.y() >> cam.translation.z())) {
    throw InputError(path.string() + ": malformed translation");
  }
  if (!(in >> cam.width >> cam.height)) {
    throw InputError(path.string() + ": malformed image size");
  }
  cam.validate();
  return cam;
}

void saveCamera(const Camera& camera, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw InputError("cannot write " + path.string());
  }
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << camera.fx << ' ' << camera.fy << ' ' << camera.cx << ' ' << camera.cy << '\n';
  for (int r = 0; r < 3; ++r) {
    out << camera.rotation(r, 0) << ' ' << camera.rotation(r, 1) << ' ' << camera.rotation(r, 2) << '\n';
  }
  out << camera.translation.x() << ' ' << camera.translation.y() << ' ' << camera.translation.z() << '\n';
  out << camera.width << ' ' << camera.height << '\n';
}

LandmarkObservation loadLandmarks(const std::filesystem::path& path, int expectedCount) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open landmark file " + path.string());
  }
  LandmarkObservation obs;
  obs.points = Eigen::MatrixX2d::Zero(expectedCount, 2);
  obs.weights = Eigen::VectorXd::Zero(expectedCount);
  std::vector<bool> seen(static_cast<size_t>(expectedCount), false);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') {
      continue;
    }
    std::istringstream ls(line);
    int id = 0;
    double u = 0, v = 0, conf = 0;
    if (!(ls >> id >> u >> v >> conf)) {
      throw InputError(path.string() + ": malformed landmark record '" + line + "'");
    }
    if (id < 0 || id >= expectedCount || seen[static_cast<size_t>(id)]) {
      throw InputError(detail::concat(path.string(), ": bad or repeated landmark id ", id));
    }
    if (!std::isfinite(u) || !std::isfinite(v) || !std::isfinite(conf)) {
      throw InputError(path.string() + ": non-finite landmark record");
    }
    seen[static_cast<size_t>(id)] = true;
    obs.points.row(id) << u, v;
    obs.weights(id) = std::clamp(conf, 0.0, 1.0);
  }
  return obs;
}

void saveLandmarks(const LandmarkObservation& obs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw InputError("cannot write " + path.string());
  }
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (Eigen::Index i = 0; i < obs.points.rows(); ++i) {
    out << i << ' ' << obs.points(i, 0) << ' ' << obs.points(i, 1) << ' ' << obs.weights(i) << '\n';
  }
}

}  // namespace blendrig
