#include "blendrig/synth.h"

#include "blendrig/config.h"
#include "blendrig/dataset.h"
#include "blendrig/error.h"
#include "blendrig/render.h"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

namespace blendrig {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kAx = 0.075;
constexpr double kAy = 0.100;
constexpr double kAz = 0.090;
constexpr double kMouthY = -0.040;

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

double gauss2(double dx, double dy, double sx, double sy) {
  return std::exp(-(dx * dx) / (sx * sx) - (dy * dy) / (sy * sy));
}

Eigen::Vector3d ellipsoidNormal(const Eigen::Vector3d& p) {
  return Eigen::Vector3d(p.x() / (kAx * kAx), p.y() / (kAy * kAy), p.z() / (kAz * kAz)).normalized();
}

double front(const Eigen::Vector3d& p) { return smoothstep(-0.01, 0.04, p.z()); }

Eigen::Vector3d headPoint(double phi, double theta) {
  Eigen::Vector3d p(kAx * std::sin(phi) * std::sin(theta), kAy * std::cos(phi), kAz * std::sin(phi) * std::cos(theta));
  const double x = p.x();
  const double y = p.y();
  const double ax = std::abs(x);
  const double relief = 0.022 * gauss2(x, y, 0.011, 0.016)                // nose
                        + 0.005 * gauss2(x, y - 0.040, 0.050, 0.010)      // brow ridge
                        - 0.006 * gauss2(ax - 0.030, y - 0.020, 0.012, 0.012)  // eye sockets
                        + 0.006 * gauss2(x, y + 0.075, 0.025, 0.015);     // chin
  return p + front(p) * relief * ellipsoidNormal(p);
}

Eigen::Vector3d mirrored(const Eigen::Vector3d& d) { return {-d.x(), d.y(), d.z()}; }

// Displacement of the symmetric or left-side blendshapes at a neutral point.
Eigen::Vector3d jawWeightDisplacement(const Eigen::Vector3d& p, const Eigen::Vector3d& amount) {
  const double w = smoothstep(kMouthY + 0.004, kMouthY - 0.025, p.y()) * std::exp(-std::pow(p.x() / 0.065, 2)) *
                   smoothstep(-0.03, 0.02, p.z());
  return w * amount;
}

Eigen::Vector3d templateDisplacement(int shape, const Eigen::Vector3d& p) {
  const double x = p.x();
  const double y = p.y();
  const double ax = std::abs(x);
  const double f = front(p);
  switch (shape) {
    case 0:  // jawOpen
      return jawWeightDisplacement(p, Eigen::Vector3d(0.0, -0.010, -0.003));
    case 1: {  // smileL
      const double g = gauss2(x - 0.025, y - kMouthY, 0.012, 0.012) * f;
      return g * Eigen::Vector3d(0.004, 0.005, -0.002);
    }
    case 3: {  // browRaise
      const double g = gauss2(x, y - 0.042, 0.050, 0.012) * f;
      return g * Eigen::Vector3d(0.0, 0.006, 0.0);
    }
    case 4: {  // cheekPuff
      const double g = gauss2(ax - 0.045, y + 0.025, 0.015, 0.015) * f;
      return 0.006 * g * ellipsoidNormal(p);
    }
    case 5: {  // eyeCloseL
      const double g = gauss2(x - 0.030, y - 0.025, 0.008, 0.008) * f;
      return g * Eigen::Vector3d(0.0, -0.004, 0.001);
    }
    case 7: {  // mouthLeft
      const double g = gauss2(x, y - kMouthY, 0.030, 0.012) * f;
      return g * Eigen::Vector3d(0.005, 0.0, 0.0);
    }
    default:
      return Eigen::Vector3d::Zero();
  }
}

int nearestFrontFace(const TriMesh& mesh, double tx, double ty) {
  int best = -1;
  double bestD = std::numeric_limits<double>::infinity();
  for (int f = 0; f < mesh.faceCount(); ++f) {
    const Eigen::RowVector3d c =
        (mesh.vertices.row(mesh.faces(f, 0)) + mesh.vertices.row(mesh.faces(f, 1)) + mesh.vertices.row(mesh.faces(f, 2))) /
        3.0;
    if (c.z() <= 0.0) {
      continue;
    }
    const double d = (c.x() - tx) * (c.x() - tx) + (c.y() - ty) * (c.y() - ty);
    if (d < bestD) {
      bestD = d;
      best = f;
    }
  }
  return best;
}

double signedVolume(const TriMesh& mesh) {
  double v = 0.0;
  for (int f = 0; f < mesh.faceCount(); ++f) {
    const Eigen::Vector3d a = mesh.vertices.row(mesh.faces(f, 0)).transpose();
    const Eigen::Vector3d b = mesh.vertices.row(mesh.faces(f, 1)).transpose();
    const Eigen::Vector3d c = mesh.vertices.row(mesh.faces(f, 2)).transpose();
    v += a.dot(b.cross(c)) / 6.0;
  }
  return v;
}

}  // namespace

std::vector<int> mouthPatchFaces(const TriMesh& surface) {
  std::vector<int> faces;
  for (int f = 0; f < surface.faceCount(); ++f) {
    bool inside = true;
    for (int k = 0; k < 3; ++k) {
      const Eigen::RowVector3d p = surface.vertices.row(surface.faces(f, k));
      inside = inside && p.z() > 0.02 && std::abs(p.x()) < 0.028 && std::abs(p.y() - kMouthY) < 0.012;
    }
    if (inside) {
      faces.push_back(f);
    }
  }
  return faces;
}

TetTopology makeMouthFill(const TriMesh& surface, const std::vector<int>& patchFaces, double depth) {
  const int n = surface.vertexCount();
  std::map<int, int> local;
  for (int f : patchFaces) {
    for (int k = 0; k < 3; ++k) {
      local.emplace(surface.faces(f, k), 0);
    }
  }
  int next = 0;
  for (auto& [v, idx] : local) {
    idx = next++;
  }
  const Positions normals = computeVertexNormals(surface.vertices, surface.faces);
  TetTopology fill;
  fill.interior.resize(next, 3);
  for (const auto& [v, idx] : local) {
    fill.interior.row(idx) = surface.vertices.row(v) - depth * normals.row(v);
  }
  const Positions all = combinedPositions(surface.vertices, fill.interior);
  std::vector<Eigen::Vector4i> tets;
  for (int f : patchFaces) {
    int c[3] = {surface.faces(f, 0), surface.faces(f, 1), surface.faces(f, 2)};
    std::sort(c, c + 3);
    const int i = c[0];
    const int j = c[1];
    const int k = c[2];
    const int ii = n + local.at(i);
    const int jj = n + local.at(j);
    const int kk = n + local.at(k);
    for (Eigen::Vector4i t : {Eigen::Vector4i(i, j, k, kk), Eigen::Vector4i(i, j, jj, kk), Eigen::Vector4i(i, ii, jj, kk)}) {
      const double vol = tetSignedVolume(all.row(t(0)).transpose(), all.row(t(1)).transpose(),
                                         all.row(t(2)).transpose(), all.row(t(3)).transpose());
      if (vol < 0.0) {
        std::swap(t(0), t(1));
      }
      tets.push_back(t);
    }
  }
  fill.tets.resize(static_cast<Eigen::Index>(tets.size()), 4);
  for (size_t t = 0; t < tets.size(); ++t) {
    fill.tets.row(static_cast<Eigen::Index>(t)) = tets[t].transpose();
  }
  validateTetOrientation(all, fill.tets);
  return fill;
}

BlendshapeRig makeHeadTemplate(int rings, int segments) {
  if (rings < 3 || segments < 4 || segments % 2 != 0) {
    throw InputError("head template needs rings >= 3 and an even segment count >= 4");
  }
  const int n = 2 + rings * segments;
  BlendshapeRig rig;
  Positions v(n, 3);
  v.row(0) = headPoint(0.0, 0.0).transpose();
  v(0, 0) = 0.0;
  auto index = [&](int r, int s) { return 1 + (r - 1) * segments + (s % segments); };
  for (int r = 1; r <= rings; ++r) {
    const double phi = kPi * r / (rings + 1);
    for (int s = 0; s <= segments / 2; ++s) {
      Eigen::Vector3d p = headPoint(phi, 2.0 * kPi * s / segments);
      if (s == 0 || s == segments / 2) {
        p.x() = 0.0;
      }
      v.row(index(r, s)) = p.transpose();
      if (s > 0 && s < segments / 2) {
        v.row(index(r, segments - s)) = mirrored(p).transpose();
      }
    }
  }
  v.row(n - 1) = headPoint(kPi, 0.0).transpose();
  v(n - 1, 0) = 0.0;

  std::vector<Eigen::Vector3i> faces;
  for (int s = 0; s < segments; ++s) {
    faces.emplace_back(0, index(1, s), index(1, s + 1));
  }
  for (int r = 1; r < rings; ++r) {
    for (int s = 0; s < segments; ++s) {
      const int a = index(r, s);
      const int b = index(r, s + 1);
      const int c = index(r + 1, s);
      const int d = index(r + 1, s + 1);
      faces.emplace_back(a, c, d);
      faces.emplace_back(a, d, b);
    }
  }
  for (int s = 0; s < segments; ++s) {
    faces.emplace_back(index(rings, s), n - 1, index(rings, s + 1));
  }
  rig.neutral.vertices = v;
  rig.neutral.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (size_t f = 0; f < faces.size(); ++f) {
    rig.neutral.faces.row(static_cast<Eigen::Index>(f)) = faces[f].transpose();
  }
  if (signedVolume(rig.neutral) < 0.0) {
    rig.neutral.faces.col(1).swap(rig.neutral.faces.col(2));
  }

  rig.mirrorMap = computeMirrorMap(rig.neutral.vertices);
  rig.names = {"jawOpen", "smileL", "smileR", "browRaise", "cheekPuff", "eyeCloseL", "eyeCloseR", "mouthLeft"};
  rig.symmetry = {{0, 0}, {1, 2}, {3, 3}, {4, 4}, {5, 6}};
  rig.basis = Eigen::MatrixXd::Zero(3 * static_cast<Eigen::Index>(n), 8);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d p = v.row(i).transpose();
    for (int j : {0, 1, 3, 4, 5, 7}) {
      rig.basis.block<3, 1>(3 * i, j) = templateDisplacement(j, p);
    }
  }
  for (int i = 0; i < n; ++i) {
    const int mi = rig.mirrorMap[static_cast<size_t>(i)];
    rig.basis.block<3, 1>(3 * i, 2) = mirrored(rig.basis.block<3, 1>(3 * mi, 1));
    rig.basis.block<3, 1>(3 * i, 6) = mirrored(rig.basis.block<3, 1>(3 * mi, 5));
  }

  const double targets[][2] = {
      // brows
      {0.045, 0.040}, {-0.045, 0.040}, {0.030, 0.045}, {-0.030, 0.045}, {0.015, 0.040}, {-0.015, 0.040},
      // eyes
      {0.045, 0.020}, {-0.045, 0.020}, {0.015, 0.020}, {-0.015, 0.020}, {0.030, 0.027}, {-0.030, 0.027},
      {0.030, 0.013}, {-0.030, 0.013},
      // nose
      {0.0, 0.020}, {0.0, 0.0}, {0.012, -0.012}, {-0.012, -0.012}, {0.0, -0.015},
      // mouth
      {0.025, -0.040}, {-0.025, -0.040}, {0.0, -0.030}, {0.0, -0.050}, {0.012, -0.033}, {-0.012, -0.033},
      {0.012, -0.047}, {-0.012, -0.047},
      // jaw line
      {0.065, -0.010}, {-0.065, -0.010}, {0.060, -0.040}, {-0.060, -0.040}, {0.045, -0.065}, {-0.045, -0.065},
      {0.020, -0.080}, {-0.020, -0.080}, {0.0, -0.085},
      // cheeks
      {0.045, -0.015}, {-0.045, -0.015}};
  for (const auto& t : targets) {
    LandmarkAnchor a;
    a.face = nearestFrontFace(rig.neutral, t[0], t[1]);
    a.barycentric = Eigen::Vector3d::Constant(1.0 / 3.0);
    rig.landmarks.push_back(a);
  }
  rig.fill = makeMouthFill(rig.neutral, mouthPatchFaces(rig.neutral));
  rig.validate();
  propagateFill(rig);
  return rig;
}

BlendshapeRig makeGroundTruthRig(const BlendshapeRig& templ, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x2545f4914f6cdd1dULL + 17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Eigen::Vector3d scale(1.0 + 0.14 + 0.04 * u(rng), 1.0 - 0.08 - 0.02 * u(rng), 1.0 + 0.10 + 0.04 * u(rng));
  const double cheekbone = 0.014 + 0.004 * u(rng);
  const double chin = 0.012 + 0.004 * u(rng);
  const double forehead = -0.010 - 0.003 * u(rng);
  const double nose = 0.008 + 0.003 * u(rng);
  const double jawExtra = 0.008 + 0.004 * u(rng);
  const double puffExtra = 0.006 + 0.003 * u(rng);

  BlendshapeRig gt = templ;
  const int n = templ.vertexCount();
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d p = templ.neutral.vertices.row(i).transpose();
    const double ax = std::abs(p.x());
    const double f = front(p);
    const double relief = f * (cheekbone * gauss2(ax - 0.050, p.y(), 0.020, 0.020) +
                               chin * gauss2(p.x(), p.y() + 0.075, 0.020, 0.020) +
                               forehead * gauss2(p.x(), p.y() - 0.060, 0.030, 0.030) +
                               nose * gauss2(p.x(), p.y() + 0.005, 0.012, 0.020));
    gt.neutral.vertices.row(i) = (scale.cwiseProduct(p) + relief * ellipsoidNormal(p)).transpose();
    gt.basis.block<3, 1>(3 * i, 0) += jawWeightDisplacement(p, Eigen::Vector3d(0.0, -jawExtra, 0.5 * jawExtra));
    const double g = gauss2(ax - 0.050, p.y() + 0.020, 0.020, 0.020) * f;
    gt.basis.block<3, 1>(3 * i, 4) += puffExtra * g * ellipsoidNormal(p);
  }
  gt.fill = makeMouthFill(gt.neutral, mouthPatchFaces(templ.neutral));
  gt.validate();
  propagateFill(gt);
  return gt;
}

std::vector<bool> facialRegion(const BlendshapeRig& templ) {
  std::vector<bool> region(static_cast<size_t>(templ.vertexCount()));
  for (int i = 0; i < templ.vertexCount(); ++i) {
    region[static_cast<size_t>(i)] = templ.neutral.vertices(i, 2) > 0.0;
  }
  return region;
}

MotionParameters MotionTrajectory::at(double seconds) const {
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double phase[6];
  for (double& p : phase) {
    p = 2.0 * kPi * u(rng);
  }
  const double deg = kPi / 180.0;
  const double yaw = yawDegrees * deg * std::sin(2.0 * kPi * seconds / 2.7 + phase[0]);
  const double pitch = pitchDegrees * deg * std::sin(2.0 * kPi * seconds / 3.3 + phase[1]);
  const double roll = rollDegrees * deg * std::sin(2.0 * kPi * seconds / 4.1 + phase[2]);
  MotionParameters m;
  m.rotation = (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) * Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX()) *
                Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()))
                   .toRotationMatrix();
  const double periods[3] = {3.7, 2.9, 4.3};
  for (int k = 0; k < 3; ++k) {
    m.translation(k) = translationAmplitude(k) * std::sin(2.0 * kPi * seconds / periods[k] + phase[3 + k]);
  }
  m.beta.resize(basisCount);
  for (int j = 0; j < basisCount; ++j) {
    const double amp = 0.6 + 0.4 * u(rng);
    const double period = 1.6 + 1.6 * u(rng);
    const double ph = 2.0 * kPi * u(rng);
    const double s = std::max(0.0, std::sin(2.0 * kPi * seconds / period + ph));
    m.beta(j) = amp * s * s;
  }
  return m;
}

Camera lookAtCamera(const Eigen::Vector3d& center,
                    const Eigen::Vector3d& target,
                    double focal,
                    int width,
                    int height) {
  const Eigen::Vector3d f = (target - center).normalized();
  const Eigen::Vector3d r = f.cross(Eigen::Vector3d::UnitY()).normalized();
  const Eigen::Vector3d d = f.cross(r);
  Camera cam;
  cam.rotation.row(0) = r.transpose();
  cam.rotation.row(1) = d.transpose();
  cam.rotation.row(2) = f.transpose();
  cam.translation = -cam.rotation * center;
  cam.fx = focal;
  cam.fy = focal;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.width = width;
  cam.height = height;
  return cam;
}

Camera makeFixtureCamera(int k, int views, int resolution) {
  const double deg = kPi / 180.0;
  const double azimuth = views == 1 ? 0.0 : (-55.0 + 110.0 * k / (views - 1)) * deg;
  const double elevation = (k % 2 == 0 ? 6.0 : -6.0) * deg;
  const double distance = 0.5;
  const Eigen::Vector3d center(distance * std::sin(azimuth) * std::cos(elevation), distance * std::sin(elevation),
                               distance * std::cos(azimuth) * std::cos(elevation));
  Camera cam = lookAtCamera(center, Eigen::Vector3d::Zero(), 200.0 * resolution / 128.0, resolution, resolution);
  cam.view = k;
  return cam;
}

Positions headAlbedo(const BlendshapeRig& templ) {
  const int n = templ.vertexCount();
  Positions albedo(n, 3);
  const Eigen::RowVector3d skin(0.82, 0.62, 0.50);
  const Eigen::RowVector3d lips(0.65, 0.30, 0.30);
  const Eigen::RowVector3d brow(0.30, 0.22, 0.18);
  const Eigen::RowVector3d eye(0.25, 0.25, 0.30);
  const Eigen::RowVector3d hair(0.25, 0.18, 0.12);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d p = templ.neutral.vertices.row(i).transpose();
    const double x = p.x();
    const double y = p.y();
    const double ax = std::abs(x);
    Eigen::RowVector3d c = skin * (1.0 + 0.12 * std::sin(90.0 * x) * std::sin(70.0 * y) + 0.08 * std::sin(55.0 * p.z() + 40.0 * y));
    const double wl = gauss2(x, y - kMouthY, 0.022, 0.006) * front(p);
    c = (1.0 - wl) * c + wl * lips;
    const double wb = gauss2(ax - 0.030, y - 0.042, 0.018, 0.004) * front(p);
    c = (1.0 - wb) * c + wb * brow;
    const double we = gauss2(ax - 0.030, y - 0.020, 0.008, 0.008) * front(p);
    c = (1.0 - we) * c + we * eye;
    const double wh = smoothstep(0.0, -0.03, p.z()) + (1.0 - smoothstep(0.0, -0.03, p.z())) * smoothstep(0.07, 0.09, y);
    c = (1.0 - wh) * c + wh * hair;
    albedo.row(i) = c.cwiseMax(0.0).cwiseMin(1.0);
  }
  return albedo;
}

LambertRender renderLambertian(const Positions& world,
                               const Faces& faces,
                               const Positions& albedo,
                               const Camera& camera,
                               double background) {
  const ScreenVertices screen = projectVertices(camera, world);
  const RasterOutput raster = rasterize(screen, faces, camera.width, camera.height);
  const Positions normals = computeVertexNormals(world, faces);
  const Eigen::Vector3d light = Eigen::Vector3d(0.3, 0.4, 1.0).normalized();
  LambertRender out;
  out.image = Image(camera.width, camera.height, 3, background);
  out.mask = raster.coverage();
  for (int p = 0; p < camera.width * camera.height; ++p) {
    const int f = raster.faceId[static_cast<size_t>(p)];
    if (f < 0) {
      continue;
    }
    const Eigen::Vector3d& b = raster.barycentric[static_cast<size_t>(p)];
    Eigen::Vector3d n = Eigen::Vector3d::Zero();
    Eigen::Vector3d a = Eigen::Vector3d::Zero();
    for (int k = 0; k < 3; ++k) {
      n += b(k) * normals.row(faces(f, k)).transpose();
      a += b(k) * albedo.row(faces(f, k)).transpose();
    }
    const double shade = 0.3 + 0.7 * std::max(0.0, n.normalized().dot(light));
    for (int c = 0; c < 3; ++c) {
      out.image.data[static_cast<size_t>(p) * 3 + static_cast<size_t>(c)] = std::clamp(a(c) * shade, 0.0, 1.0);
    }
  }
  return out;
}

void SynthSpec::validate() const {
  if (views < 1) {
    throw InputError("synth needs at least one view");
  }
  if (static_cast<int>(fps.size()) != views) {
    throw InputError(detail::concat("synth needs one frame rate per view (", views, " views, ", fps.size(), " rates)"));
  }
  for (double r : fps) {
    if (!(r > 0.0)) {
      throw InputError("frame rates must be positive");
    }
  }
  if (!(duration > 0.0) || resolution < 8 || !(landmarkNoise >= 0.0) || !(maxOffset >= 0.0 && maxOffset < 1.0)) {
    throw InputError("invalid synth spec (duration > 0, resolution >= 8, noise >= 0, 0 <= offset < 1)");
  }
}

int frameCountFor(double duration, double rate) { return static_cast<int>(std::floor(duration * rate + 1e-9)); }

GroundTruthScan facialScan(const TriMesh& mesh, const std::vector<bool>& region) {
  GroundTruthScan scan = scanFromMesh(mesh);
  scan.region = region;
  return scan;
}

SynthResult synthesizeProject(const SynthSpec& spec, const fs::path& root) {
  spec.validate();
  const BlendshapeRig templ = makeHeadTemplate();
  const BlendshapeRig gt = makeGroundTruthRig(templ, spec.seed);
  fs::create_directories(root / "views");
  fs::create_directories(root / "out");
  saveRig(templ, root / "rig");
  saveRig(gt, root / "ground_truth" / "rig");
  saveScanPly(facialScan(gt.neutral, facialRegion(templ)), root / "scan.ply");

  TrainConfig config;
  config.seed = spec.seed;
  config.renderWidth = spec.resolution;
  config.renderHeight = spec.resolution;
  saveTrainConfig(config, root / "config.json");

  MotionTrajectory trajectory;
  trajectory.seed = spec.seed;
  trajectory.basisCount = gt.basisCount();
  const Positions albedo = headAlbedo(templ);
  std::mt19937_64 rng(spec.seed * 0xd1342543de82ef95ULL + 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  SynthResult result;
  for (int k = 0; k < spec.views; ++k) {
    const double rate = spec.fps[static_cast<size_t>(k)];
    FrameClock clock;
    clock.frameRate = rate;
    clock.startTime = u(rng) * spec.maxOffset / rate;
    const Camera camera = makeFixtureCamera(k, spec.views, spec.resolution);
    char name[16];
    std::snprintf(name, sizeof(name), "cam%02d", k);
    const fs::path dir = root / "views" / name;
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "masks");
    fs::create_directories(dir / "landmarks");
    saveCamera(camera, dir / "camera.txt");
    saveClock(clock, dir / "clock.txt");
    const int count = frameCountFor(spec.duration, rate);
    for (int i = 0; i < count; ++i) {
      const double t = frameTime(clock, i);
      const MotionParameters motion = trajectory.at(t);
      Positions y = evaluateExpression(gt, motion.beta) * motion.rotation.transpose();
      y.rowwise() += motion.translation.transpose();
      const LambertRender r = renderLambertian(y, gt.neutral.faces, albedo, camera);
      const std::string stem = frameStem(i);
      savePng(r.image, dir / "frames" / (stem + ".png"));
      savePng(r.mask, dir / "masks" / (stem + ".png"));

      const ScreenVertices screen = projectVertices(camera, y);
      const RasterOutput raster = rasterize(screen, gt.neutral.faces, camera.width, camera.height);
      const Positions points = embedLandmarks(y, gt.neutral.faces, gt.landmarks);
      LandmarkObservation obs;
      obs.points.resize(points.rows(), 2);
      obs.weights.resize(points.rows());
      for (Eigen::Index l = 0; l < points.rows(); ++l) {
        const Projection p = project(camera, points.row(l).transpose());
        double visible = p.valid ? 1.0 : 0.0;
        const int col = static_cast<int>(std::floor(p.pixel.x()));
        const int row = static_cast<int>(std::floor(p.pixel.y()));
        if (col < 0 || row < 0 || col >= camera.width || row >= camera.height) {
          visible = 0.0;
        } else if (raster.depth[static_cast<size_t>(row) * camera.width + col] < p.depth - 0.005) {
          visible = 0.0;  // occluded
        }
        obs.points(l, 0) = p.pixel.x() + spec.landmarkNoise * noise(rng);
        obs.points(l, 1) = p.pixel.y() + spec.landmarkNoise * noise(rng);
        obs.weights(l) = visible;
      }
      saveLandmarks(obs, dir / "landmarks" / (stem + ".txt"));
    }
    result.frameCounts.push_back(count);
    result.clocks.push_back(clock);
  }
  return result;
}

}  // namespace blendrig
