#include "blendrig/eval.h"

#include "blendrig/camera.h"
#include "blendrig/error.h"
#include "blendrig/render.h"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace blendrig {

void GroundTruthScan::validate() const {
  if (points.rows() == 0) {
    throw InputError("scan has no points");
  }
  if (normals.rows() != points.rows()) {
    throw InputError("scan normals do not match its points");
  }
  if (!region.empty() && region.size() != static_cast<size_t>(points.rows())) {
    throw InputError("scan region mask has the wrong length");
  }
  for (Eigen::Index i = 0; i < normals.rows(); ++i) {
    if (std::abs(normals.row(i).norm() - 1.0) > 1e-6) {
      throw InputError(detail::concat("scan normal ", i, " is not unit length"));
    }
  }
}

Eigen::Vector3d closestPointOnTriangle(const Eigen::Vector3d& p,
                                       const Eigen::Vector3d& a,
                                       const Eigen::Vector3d& b,
                                       const Eigen::Vector3d& c) {
  // Voronoi-region walk over vertices, edges and the face.
  const Eigen::Vector3d ab = b - a;
  const Eigen::Vector3d ac = c - a;
  const Eigen::Vector3d ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) {
    return a;
  }
  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) {
    return b;
  }
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    return a + (d1 / (d1 - d3)) * ab;
  }
  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) {
    return c;
  }
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    return a + (d2 / (d2 - d6)) * ac;
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }
  const double denom = va + vb + vc;
  if (!(std::abs(denom) > 0.0)) {
    // Degenerate triangle: fall back to the closest of its edges.
    Eigen::Vector3d best = a;
    double bestD = (p - a).squaredNorm();
    const Eigen::Vector3d ends[3][2] = {{a, b}, {b, c}, {c, a}};
    for (const auto& e : ends) {
      const Eigen::Vector3d d = e[1] - e[0];
      const double len2 = d.squaredNorm();
      const double t = len2 > 0.0 ? std::clamp((p - e[0]).dot(d) / len2, 0.0, 1.0) : 0.0;
      const Eigen::Vector3d q = e[0] + t * d;
      if ((p - q).squaredNorm() < bestD) {
        bestD = (p - q).squaredNorm();
        best = q;
      }
    }
    return best;
  }
  const double v = vb / denom;
  const double w = vc / denom;
  return a + ab * v + ac * w;
}

TriangleBvh::TriangleBvh(const TriMesh& mesh) : mesh_(mesh) {
  if (mesh.faceCount() == 0) {
    throw InputError("cannot build a BVH over an empty mesh");
  }
  order_.resize(static_cast<size_t>(mesh.faceCount()));
  std::iota(order_.begin(), order_.end(), 0);
  centroids_.resize(order_.size());
  for (int f = 0; f < mesh.faceCount(); ++f) {
    centroids_[static_cast<size_t>(f)] =
        (mesh.vertices.row(mesh.faces(f, 0)) + mesh.vertices.row(mesh.faces(f, 1)) +
         mesh.vertices.row(mesh.faces(f, 2)))
            .transpose() /
        3.0;
  }
  nodes_.reserve(2 * order_.size());
  build(0, mesh.faceCount());
}

int TriangleBvh::build(int first, int count) {
  const int index = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box;
  Eigen::AlignedBox3d centroidBox;
  for (int k = first; k < first + count; ++k) {
    const int f = order_[static_cast<size_t>(k)];
    for (int j = 0; j < 3; ++j) {
      box.extend(mesh_.vertices.row(mesh_.faces(f, j)).transpose());
    }
    centroidBox.extend(centroids_[static_cast<size_t>(f)]);
  }
  nodes_[static_cast<size_t>(index)].box = box;
  constexpr int kLeafSize = 4;
  if (count <= kLeafSize) {
    nodes_[static_cast<size_t>(index)].first = first;
    nodes_[static_cast<size_t>(index)].count = count;
    return index;
  }
  int axis = 0;
  centroidBox.sizes().maxCoeff(&axis);
  const int mid = first + count / 2;
  std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                   [&](int x, int y) {
                     const double cx = centroids_[static_cast<size_t>(x)](axis);
                     const double cy = centroids_[static_cast<size_t>(y)](axis);
                     return cx < cy || (cx == cy && x < y);
                   });
  const int left = build(first, mid - first);
  const int right = build(mid, first + count - mid);
  nodes_[static_cast<size_t>(index)].left = left;
  nodes_[static_cast<size_t>(index)].right = right;
  return index;
}

namespace {

constexpr double kTieTolerance = 1e-12;

}  // namespace

TriangleBvh::Hit TriangleBvh::closest(const Eigen::Vector3d& p) const {
  Hit best;
  best.squaredDistance = std::numeric_limits<double>::infinity();
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[static_cast<size_t>(stack.back())];
    stack.pop_back();
    if (node.box.squaredExteriorDistance(p) > best.squaredDistance * (1.0 + kTieTolerance)) {
      continue;
    }
    if (node.left < 0) {
      for (int k = node.first; k < node.first + node.count; ++k) {
        const int f = order_[static_cast<size_t>(k)];
        const Eigen::Vector3d q = closestPointOnTriangle(p, mesh_.vertices.row(mesh_.faces(f, 0)).transpose(),
                                                         mesh_.vertices.row(mesh_.faces(f, 1)).transpose(),
                                                         mesh_.vertices.row(mesh_.faces(f, 2)).transpose());
        const double d = (q - p).squaredNorm();
        // Near-equal distances go to the lower face id, so the pick does not
        // depend on rounding in the current frame.
        const bool tie = d <= best.squaredDistance * (1.0 + kTieTolerance) &&
                         d >= best.squaredDistance * (1.0 - kTieTolerance);
        if ((d < best.squaredDistance && !tie) || (tie && f < best.face)) {
          best.squaredDistance = d;
          best.point = q;
          best.face = f;
        }
      }
      continue;
    }
    const Node& l = nodes_[static_cast<size_t>(node.left)];
    const Node& r = nodes_[static_cast<size_t>(node.right)];
    // Visit the nearer child first (pushed last).
    if (l.box.squaredExteriorDistance(p) <= r.box.squaredExteriorDistance(p)) {
      stack.push_back(node.right);
      stack.push_back(node.left);
    } else {
      stack.push_back(node.left);
      stack.push_back(node.right);
    }
  }
  return best;
}

namespace {

void summarize(PointToPlaneResult& r) {
  if (r.errorsMm.empty()) {
    return;
  }
  const double n = static_cast<double>(r.errorsMm.size());
  const double mean = std::accumulate(r.errorsMm.begin(), r.errorsMm.end(), 0.0) / n;
  double var = 0.0;
  for (double e : r.errorsMm) {
    var += (e - mean) * (e - mean);
  }
  r.meanMm = mean;
  r.stdMm = std::sqrt(var / n);
}

}  // namespace

PointToPlaneResult pointToPlaneError(const TriMesh& recon,
                                     const GroundTruthScan& scan,
                                     const PointToPlaneOptions& options) {
  recon.validate();
  if (recon.faceCount() == 0) {
    throw InputError("reconstruction mesh is empty");
  }
  scan.validate();
  const TriangleBvh bvh(recon);
  PointToPlaneResult result;
  for (int i = 0; i < scan.size(); ++i) {
    if (!scan.region.empty() && !scan.region[static_cast<size_t>(i)]) {
      continue;
    }
    const Eigen::Vector3d p = scan.points.row(i).transpose();
    const TriangleBvh::Hit hit = bvh.closest(p);
    const double d = std::abs(scan.normals.row(i).dot((hit.point - p).transpose())) * 1000.0;
    result.errorsMm.push_back(options.squared ? d * d : d);
    result.evaluated.push_back(i);
  }
  if (result.errorsMm.empty()) {
    throw InputError("scan region mask selects no points");
  }
  if (options.symmetric) {
    // Reverse direction: each recon vertex against the tangent plane of its
    // nearest scan point.
    for (int v = 0; v < recon.vertexCount(); ++v) {
      const Eigen::RowVector3d q = recon.vertices.row(v);
      Eigen::Index nearest = 0;
      (scan.points.rowwise() - q).rowwise().squaredNorm().minCoeff(&nearest);
      const double d = std::abs(scan.normals.row(nearest).dot(q - scan.points.row(nearest))) * 1000.0;
      result.errorsMm.push_back(options.squared ? d * d : d);
    }
  }
  summarize(result);
  return result;
}

GroundTruthScan scanFromMesh(const TriMesh& mesh) {
  GroundTruthScan scan;
  scan.points = mesh.vertices;
  scan.normals = computeVertexNormals(mesh.vertices, mesh.faces);
  return scan;
}

Positions RigidTransform::apply(const Positions& points) const {
  Positions out = points * rotation.transpose();
  out.rowwise() += translation.transpose();
  return out;
}

RigidTransform procrustes(const Positions& source, const Positions& target) {
  if (source.rows() != target.rows() || source.rows() < 3) {
    throw InputError("procrustes needs at least 3 corresponding points");
  }
  const Eigen::Matrix3Xd src = source.transpose();
  const Eigen::Matrix3Xd dst = target.transpose();
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
  RigidTransform out;
  out.rotation = t.topLeftCorner<3, 3>();
  out.translation = t.topRightCorner<3, 1>();
  return out;
}

TriMesh alignByLandmarks(const TriMesh& mesh,
                         const TriMesh& reference,
                         const std::vector<LandmarkAnchor>& anchors) {
  const Positions src = embedLandmarks(mesh.vertices, mesh.faces, anchors);
  const Positions dst = embedLandmarks(reference.vertices, reference.faces, anchors);
  const RigidTransform t = procrustes(src, dst);
  return TriMesh{t.apply(mesh.vertices), mesh.faces};
}

double RigEvaluation::worstMeanMm() const {
  double worst = 0.0;
  for (const auto& r : results) {
    worst = std::max(worst, r.meanMm);
  }
  return worst;
}

RigEvaluation evaluateRig(const BlendshapeRig& recon,
                          const BlendshapeRig& reference,
                          const std::vector<bool>& region,
                          bool alignLandmarks,
                          const PointToPlaneOptions& options) {
  if (recon.vertexCount() != reference.vertexCount() || recon.basisCount() != reference.basisCount()) {
    throw InputError(detail::concat("rig shapes differ: ", recon.vertexCount(), "x", recon.basisCount(), " vs ",
                                    reference.vertexCount(), "x", reference.basisCount()));
  }
  RigidTransform align;
  if (alignLandmarks) {
    if (reference.landmarks.size() < 3) {
      throw InputError("landmark alignment needs at least 3 anchors");
    }
    align = procrustes(embedLandmarks(recon.neutral.vertices, recon.neutral.faces, reference.landmarks),
                       embedLandmarks(reference.neutral.vertices, reference.neutral.faces, reference.landmarks));
  }
  RigEvaluation out;
  for (int j = -1; j < recon.basisCount(); ++j) {
    const Positions mine = j < 0 ? recon.neutral.vertices : recon.blendshapePositions(j);
    const Positions theirs = j < 0 ? reference.neutral.vertices : reference.blendshapePositions(j);
    GroundTruthScan scan = scanFromMesh(TriMesh{theirs, reference.neutral.faces});
    scan.region = region;
    out.names.push_back(j < 0 ? std::string("neutral") : reference.names.at(static_cast<size_t>(j)));
    out.results.push_back(pointToPlaneError(TriMesh{align.apply(mine), recon.neutral.faces}, scan, options));
  }
  return out;
}

double boundingBoxDiagonal(const Positions& points) {
  if (points.rows() == 0) {
    return 0.0;
  }
  return (points.colwise().maxCoeff() - points.colwise().minCoeff()).norm();
}

namespace {

struct PlyHeader {
  int vertexCount = 0;
  int faceCount = 0;
  std::vector<std::string> vertexProperties;
};

PlyHeader readPlyHeader(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
    throw InputError(path.string() + ": not a PLY file");
  }
  PlyHeader h;
  std::string element;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") {
        throw InputError(path.string() + ": only ASCII PLY is supported");
      }
    } else if (key == "element") {
      int count = 0;
      ls >> element >> count;
      if (element == "vertex") {
        h.vertexCount = count;
      } else if (element == "face") {
        h.faceCount = count;
      }
    } else if (key == "property" && element == "vertex") {
      std::string type;
      std::string name;
      ls >> type >> name;
      h.vertexProperties.push_back(name);
    } else if (key == "end_header") {
      return h;
    }
  }
  throw InputError(path.string() + ": truncated PLY header");
}

int propertyIndex(const PlyHeader& h, const std::string& name) {
  const auto it = std::find(h.vertexProperties.begin(), h.vertexProperties.end(), name);
  return it == h.vertexProperties.end() ? -1 : static_cast<int>(it - h.vertexProperties.begin());
}

std::vector<double> readVertexRow(std::istream& in, size_t count, const std::filesystem::path& path) {
  std::vector<double> row(count);
  for (auto& v : row) {
    if (!(in >> v)) {
      throw InputError(path.string() + ": truncated vertex data");
    }
  }
  return row;
}

}  // namespace

GroundTruthScan loadScanPly(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open " + path.string());
  }
  const PlyHeader h = readPlyHeader(in, path);
  const int idx[6] = {propertyIndex(h, "x"),  propertyIndex(h, "y"),  propertyIndex(h, "z"),
                      propertyIndex(h, "nx"), propertyIndex(h, "ny"), propertyIndex(h, "nz")};
  for (int i : idx) {
    if (i < 0) {
      throw InputError(path.string() + ": scan needs x y z nx ny nz");
    }
  }
  const int region = propertyIndex(h, "region");
  GroundTruthScan scan;
  scan.points.resize(h.vertexCount, 3);
  scan.normals.resize(h.vertexCount, 3);
  for (int v = 0; v < h.vertexCount; ++v) {
    const auto row = readVertexRow(in, h.vertexProperties.size(), path);
    for (int k = 0; k < 3; ++k) {
      scan.points(v, k) = row[static_cast<size_t>(idx[k])];
      scan.normals(v, k) = row[static_cast<size_t>(idx[k + 3])];
    }
    if (region >= 0) {
      scan.region.push_back(row[static_cast<size_t>(region)] != 0.0);
    }
  }
  scan.validate();
  return scan;
}

void saveScanPly(const GroundTruthScan& scan, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw InputError("cannot write " + path.string());
  }
  out << "ply\nformat ascii 1.0\nelement vertex " << scan.size()
      << "\nproperty double x\nproperty double y\nproperty double z\n"
         "property double nx\nproperty double ny\nproperty double nz\n";
  if (!scan.region.empty()) {
    out << "property uchar region\n";
  }
  out << "end_header\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (int i = 0; i < scan.size(); ++i) {
    out << scan.points(i, 0) << ' ' << scan.points(i, 1) << ' ' << scan.points(i, 2) << ' ' << scan.normals(i, 0)
        << ' ' << scan.normals(i, 1) << ' ' << scan.normals(i, 2);
    if (!scan.region.empty()) {
      out << ' ' << (scan.region[static_cast<size_t>(i)] ? 1 : 0);
    }
    out << '\n';
  }
  if (!out) {
    throw InputError("write failed: " + path.string());
  }
}

std::vector<double> splatErrorsToVertices(const TriMesh& mesh,
                                          const GroundTruthScan& scan,
                                          const PointToPlaneResult& result) {
  std::vector<double> sum(static_cast<size_t>(mesh.vertexCount()), 0.0);
  std::vector<int> count(sum.size(), 0);
  for (size_t k = 0; k < result.evaluated.size(); ++k) {
    const Eigen::RowVector3d p = scan.points.row(result.evaluated[k]);
    Eigen::Index nearest = 0;
    (mesh.vertices.rowwise() - p).rowwise().squaredNorm().minCoeff(&nearest);
    sum[static_cast<size_t>(nearest)] += result.errorsMm[k];
    ++count[static_cast<size_t>(nearest)];
  }
  for (size_t v = 0; v < sum.size(); ++v) {
    if (count[v] > 0) {
      sum[v] /= count[v];
    }
  }
  return sum;
}

Eigen::Vector3i heatmapColor(double errorMm, double capMm) {
  const double t = capMm > 0.0 ? std::clamp(errorMm / capMm, 0.0, 1.0) : 1.0;
  return {static_cast<int>(std::lround(255.0 * t)), 0, static_cast<int>(std::lround(255.0 * (1.0 - t)))};
}

void exportHeatmap(const TriMesh& mesh,
                   const std::vector<double>& vertexErrorsMm,
                   const std::filesystem::path& path,
                   double capMm) {
  if (vertexErrorsMm.size() != static_cast<size_t>(mesh.vertexCount())) {
    throw InputError("heatmap needs one error per vertex");
  }
  std::ofstream out(path);
  if (!out) {
    throw InputError("cannot write " + path.string());
  }
  out << "ply\nformat ascii 1.0\nelement vertex " << mesh.vertexCount()
      << "\nproperty double x\nproperty double y\nproperty double z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nproperty double error_mm\n"
         "element face "
      << mesh.faceCount() << "\nproperty list uchar int vertex_indices\nend_header\n"
      << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (int v = 0; v < mesh.vertexCount(); ++v) {
    const Eigen::Vector3i c = heatmapColor(vertexErrorsMm[static_cast<size_t>(v)], capMm);
    out << mesh.vertices(v, 0) << ' ' << mesh.vertices(v, 1) << ' ' << mesh.vertices(v, 2) << ' ' << c(0) << ' '
        << c(1) << ' ' << c(2) << ' ' << vertexErrorsMm[static_cast<size_t>(v)] << '\n';
  }
  for (int f = 0; f < mesh.faceCount(); ++f) {
    out << "3 " << mesh.faces(f, 0) << ' ' << mesh.faces(f, 1) << ' ' << mesh.faces(f, 2) << '\n';
  }
  if (!out) {
    throw InputError("write failed: " + path.string());
  }
}

std::vector<double> loadHeatmapScalars(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open " + path.string());
  }
  const PlyHeader h = readPlyHeader(in, path);
  const int idx = propertyIndex(h, "error_mm");
  if (idx < 0) {
    throw InputError(path.string() + ": no error_mm property");
  }
  std::vector<double> out;
  for (int v = 0; v < h.vertexCount; ++v) {
    out.push_back(readVertexRow(in, h.vertexProperties.size(), path)[static_cast<size_t>(idx)]);
  }
  return out;
}

}  // namespace blendrig
