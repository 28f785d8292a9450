#pragma once

#include "blendrig/mesh.h"
#include "blendrig/rig.h"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <filesystem>
#include <string>
#include <vector>

namespace blendrig {

// Point cloud with unit normals (meters) and an optional per-point region mask.
struct GroundTruthScan {
  Positions points;
  Positions normals;
  std::vector<bool> region;  // empty = every point counts

  int size() const { return static_cast<int>(points.rows()); }
  void validate() const;
};

// Closest point on triangle (a, b, c) to p.
Eigen::Vector3d closestPointOnTriangle(const Eigen::Vector3d& p,
                                       const Eigen::Vector3d& a,
                                       const Eigen::Vector3d& b,
                                       const Eigen::Vector3d& c);

// Bounding-volume hierarchy over a triangle mesh for exact closest-point queries.
class TriangleBvh {
 public:
  explicit TriangleBvh(const TriMesh& mesh);

  struct Hit {
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    int face = -1;
    double squaredDistance = 0.0;
  };
  Hit closest(const Eigen::Vector3d& p) const;

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1;
    int right = -1;
    int first = 0;
    int count = 0;
  };
  int build(int first, int count);

  const TriMesh& mesh_;
  std::vector<int> order_;
  std::vector<Eigen::Vector3d> centroids_;
  std::vector<Node> nodes_;
};

struct PointToPlaneOptions {
  // Average squared plane distances instead of absolute ones.
  bool squared = false;
  // Also measure reconstruction vertices against the scan points' planes.
  bool symmetric = false;
};

struct PointToPlaneResult {
  double meanMm = 0.0;
  double stdMm = 0.0;
  std::vector<double> errorsMm;  // per evaluated scan point
  std::vector<int> evaluated;    // scan point indices behind errorsMm
};

PointToPlaneResult pointToPlaneError(const TriMesh& recon,
                                     const GroundTruthScan& scan,
                                     const PointToPlaneOptions& options = {});

// Scan made of the mesh vertices and their area-weighted normals.
GroundTruthScan scanFromMesh(const TriMesh& mesh);

// Rigid transform (R, t) minimizing sum |R src_i + t - dst_i|^2.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Positions apply(const Positions& points) const;
};
RigidTransform procrustes(const Positions& source, const Positions& target);

// Aligns `mesh` onto `reference` using the landmark anchors shared by both.
TriMesh alignByLandmarks(const TriMesh& mesh,
                         const TriMesh& reference,
                         const std::vector<LandmarkAnchor>& anchors);

// Scores the neutral and every blendshape of `recon` against the matching
// meshes of `reference` (restricted to `region`, a per-reference-vertex mask).
// With alignment, one landmark Procrustes fit of the neutrals is applied to
// every reconstructed mesh.
struct RigEvaluation {
  std::vector<std::string> names;  // "neutral", then the blendshape names
  std::vector<PointToPlaneResult> results;

  double worstMeanMm() const;
};
RigEvaluation evaluateRig(const BlendshapeRig& recon,
                          const BlendshapeRig& reference,
                          const std::vector<bool>& region,
                          bool alignLandmarks,
                          const PointToPlaneOptions& options = {});

// Diagonal of the axis-aligned bounding box of a point set.
double boundingBoxDiagonal(const Positions& points);

// ASCII PLY with x y z nx ny nz and an optional uchar `region`.
GroundTruthScan loadScanPly(const std::filesystem::path& path);
void saveScanPly(const GroundTruthScan& scan, const std::filesystem::path& path);

// Per-vertex errors from per-scan-point errors: each scan point is assigned to
// its nearest mesh vertex and the vertex takes the mean of its points (0 if none).
std::vector<double> splatErrorsToVertices(const TriMesh& mesh,
                                          const GroundTruthScan& scan,
                                          const PointToPlaneResult& result);

// Linear ramp from blue (0 mm) to red (capMm and above).
Eigen::Vector3i heatmapColor(double errorMm, double capMm);

// PLY with per-vertex uchar colors and a float `error_mm` scalar.
void exportHeatmap(const TriMesh& mesh,
                   const std::vector<double>& vertexErrorsMm,
                   const std::filesystem::path& path,
                   double capMm = 5.0);

// Reads back the `error_mm` channel of a heatmap PLY.
std::vector<double> loadHeatmapScalars(const std::filesystem::path& path);

}  // namespace blendrig
