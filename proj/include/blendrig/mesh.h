#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <filesystem>
#include <utility>
#include <vector>

namespace blendrig {

// One vertex per row, (x, y, z). Row-major so a block flattens to the
// interleaved 3N layout used by blendshape vectors.
using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Tets = Eigen::Matrix<int, Eigen::Dynamic, 4, Eigen::RowMajor>;
using SparseOperator = Eigen::SparseMatrix<double>;

struct TriMesh {
  Positions vertices;
  Faces faces;

  int vertexCount() const { return static_cast<int>(vertices.rows()); }
  int faceCount() const { return static_cast<int>(faces.rows()); }

  // Throws InputError on out-of-range or degenerate faces and non-finite positions.
  void validate() const;
};

// Interior vertices are appended after the N surface vertices; tets index the
// combined array.
struct TetTopology {
  Positions interior;
  Tets tets;

  int interiorCount() const { return static_cast<int>(interior.rows()); }
};

// Undirected edges stored as (min, max), sorted lexicographically, no duplicates.
struct AugmentedTopology {
  int vertexCount = 0;
  int surfaceVertexCount = 0;
  std::vector<std::pair<int, int>> edges;
};

TriMesh loadObj(const std::filesystem::path& path);
void saveObj(const TriMesh& mesh, const std::filesystem::path& path);

// Reads a tetgen `.node`/`.ele` pair. The first N nodes must coincide with the
// surface vertices to within `tolerance`.
TetTopology loadTetFill(const std::filesystem::path& nodePath,
                        const std::filesystem::path& elePath,
                        const TriMesh& surface,
                        double tolerance = 1e-6);
void saveTetFill(const TriMesh& surface,
                 const TetTopology& fill,
                 const std::filesystem::path& nodePath,
                 const std::filesystem::path& elePath);

// Stacks surface vertices and interior vertices.
Positions combinedPositions(const Positions& surface, const Positions& interior);

// Signed volume of (p0, p1, p2, p3): det[p1-p0, p2-p0, p3-p0] / 6.
double tetSignedVolume(const Eigen::Vector3d& p0,
                       const Eigen::Vector3d& p1,
                       const Eigen::Vector3d& p2,
                       const Eigen::Vector3d& p3);

// Throws InputError if any tet has non-positive volume in `combined`.
void validateTetOrientation(const Positions& combined, const Tets& tets);

AugmentedTopology buildSurfaceTopology(const TriMesh& surface);
AugmentedTopology buildAugmentedTopology(const TriMesh& surface, const TetTopology& fill);

// L = D - A over the edge set.
SparseOperator buildCombinatorialLaplacian(const AugmentedTopology& topo);

}  // namespace blendrig
