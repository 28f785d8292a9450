#pragma once

#include "blendrig/diff_coords.h"
#include "blendrig/mesh.h"

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

namespace blendrig {

// A point on the surface: barycentric combination of one face's corners.
struct LandmarkAnchor {
  int face = 0;
  Eigen::Vector3d barycentric = Eigen::Vector3d(1.0, 0.0, 0.0);
};

// left == right marks a self-symmetric blendshape. Otherwise `right` is the
// mirror image of `left`.
struct SymmetryPair {
  int left = 0;
  int right = 0;
};

struct BlendshapeRig {
  TriMesh neutral;
  // 3N x M; column j holds the interleaved (x, y, z) displacement of blendshape j.
  Eigen::MatrixXd basis;
  std::vector<std::string> names;
  std::vector<SymmetryPair> symmetry;
  std::vector<int> mirrorMap;
  std::vector<LandmarkAnchor> landmarks;

  // Optional tetrahedral fill of the neutral, and the interior positions of
  // every blendshape (neutral interior + propagated displacement).
  TetTopology fill;
  std::vector<Positions> basisInterior;

  int vertexCount() const { return neutral.vertexCount(); }
  int basisCount() const { return static_cast<int>(basis.cols()); }
  bool hasFill() const { return fill.tets.rows() > 0; }

  // Surface positions of blendshape j at full activation.
  Positions blendshapePositions(int j) const;

  void validate() const;
};

// Trainable differential-coordinate offsets, each N_tot x 3 (surface + interior).
struct RigDeformation {
  Positions neutral;
  std::vector<Positions> bases;

  static RigDeformation zeros(int totalVertices, int basisCount);
};

// b_n + B beta, reshaped to N x 3.
Positions evaluateExpression(const BlendshapeRig& rig, const Eigen::VectorXd& beta);

// Pairs each vertex with the vertex nearest to its reflection across x = 0.
// Throws InputError if some reflection has no vertex within `tolerance`.
std::vector<int> computeMirrorMap(const Positions& vertices, double tolerance = 1e-4);

// Throws InputError if the map is not an involution over [0, N).
void validateMirrorMap(const std::vector<int>& mirror, int vertexCount);

// Rewrites the right half of every symmetric blendshape from its left half
// (x negated through the mirror map). Left-half displacements are untouched;
// midline vertices get zero x-displacement. For a (left, right) pair the whole
// right blendshape becomes the reflection of the left one.
Eigen::MatrixXd mirrorUpdate(const Eigen::MatrixXd& basis,
                             const std::vector<SymmetryPair>& symmetry,
                             const std::vector<int>& mirror,
                             const Positions& referenceVertices);

// Transpose of mirrorUpdate (it is linear in the basis).
Eigen::MatrixXd mirrorUpdateAdjoint(const Eigen::MatrixXd& gradient,
                                    const std::vector<SymmetryPair>& symmetry,
                                    const std::vector<int>& mirror,
                                    const Positions& referenceVertices);

// Personalized rig: neutral and every blendshape shifted by the surface part of
// from_differential(offset); symmetric blendshapes then pass through mirrorUpdate.
struct PersonalizedSurfaces {
  Positions neutral;
  Eigen::MatrixXd basis;
};

PersonalizedSurfaces personalizeSurfaces(const BlendshapeRig& templ,
                                         const RigDeformation& deformation,
                                         const DiffCoordSystem& system);

BlendshapeRig personalize(const BlendshapeRig& templ,
                          const RigDeformation& deformation,
                          const DiffCoordSystem& system);

// Pulls gradients w.r.t. the personalized neutral (N x 3) and basis (3N x M)
// back to the differential-coordinate offsets.
RigDeformation personalizeBackward(const BlendshapeRig& templ,
                                   const DiffCoordSystem& system,
                                   const Positions& gradNeutral,
                                   const Eigen::MatrixXd& gradBasis);

// ---- regularizers ----

// Per-column locality scale a_j: median of the nonzero per-vertex displacement
// norms of column j (1.0 for an all-zero column).
Eigen::VectorXd defaultLocalityScales(const Eigen::MatrixXd& basis);

// W(3i:3i+2, j) = exp(-|B(3i:3i+2, j)| / a_j).
Eigen::MatrixXd localityWeights(const Eigen::MatrixXd& basis, const Eigen::VectorXd& scales);
Eigen::MatrixXd localityWeights(const Eigen::MatrixXd& basis, double scale);

// || W .* (B* - B) ||_F. If `grad` is given it receives d/dB*.
double localityLoss(const Eigen::MatrixXd& weights,
                    const Eigen::MatrixXd& personalized,
                    const Eigen::MatrixXd& original,
                    Eigen::MatrixXd* grad = nullptr);

struct SparsityOptions {
  double p = 0.75;
  double epsilon = 1e-8;
  // Report sum |d|^p instead of (sum |d|^p)^(1/p).
  bool powerVariant = false;
};

// Entrywise p-norm of (B* - B) over a smoothed magnitude that equals |d| for
// |d| >= epsilon and is C1 with value 0 at d = 0.
double sparsityLoss(const Eigen::MatrixXd& personalized,
                    const Eigen::MatrixXd& original,
                    const SparsityOptions& options = {},
                    Eigen::MatrixXd* grad = nullptr);

// Smoothed |d| used inside sparsityLoss, and its derivative.
double smoothedMagnitude(double d, double epsilon);
double smoothedMagnitudeDerivative(double d, double epsilon);

// ||beta||_1. Gradient is sign(beta) (0 at 0).
double expressionReg(const Eigen::VectorXd& beta, Eigen::VectorXd* grad = nullptr);

// ||b* - b||_2^2.
double neutralReg(const Positions& personalized,
                  const Positions& original,
                  Positions* grad = nullptr);

// ---- manifest I/O ----

// Loads a rig manifest (JSON). Missing mirror maps are computed; when a tet
// fill is present the interior of every blendshape is propagated with ARAP.
BlendshapeRig loadRig(const std::filesystem::path& manifestPath);

// Writes manifest.json, neutral.obj, one OBJ per blendshape and the tet fill
// into `directory`.
void saveRig(const BlendshapeRig& rig, const std::filesystem::path& directory);

// Fills rig.basisInterior by deforming the neutral fill onto every blendshape.
// Returns the smallest tet signed volume seen across all blendshapes.
double propagateFill(BlendshapeRig& rig, int maxIterations = 100, double tolerance = 1e-8);

}  // namespace blendrig
