#pragma once

#include "blendrig/camera.h"
#include "blendrig/image.h"
#include "blendrig/mesh.h"
#include "blendrig/mlp.h"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <vector>

namespace blendrig {

using LatentMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-pixel visibility. faceId is -1 on empty pixels; barycentrics are
// perspective-correct and depth is camera-space z.
struct RasterOutput {
  int width = 0;
  int height = 0;
  std::vector<int> faceId;
  std::vector<Eigen::Vector3d> barycentric;
  std::vector<double> depth;

  bool covered(int pixel) const { return faceId[static_cast<size_t>(pixel)] >= 0; }
  Image coverage() const;
};

// Screen-space vertex positions (pixels) and camera depths.
struct ScreenVertices {
  Eigen::MatrixX2d pixel;
  Eigen::VectorXd depth;

  bool valid(int v) const { return depth(v) > kMinDepth; }
};

ScreenVertices projectVertices(const Camera& camera, const Positions& world);

// Pixel-center coverage test with inclusive edges; nearest depth wins and the
// lower face id wins ties. Faces with a vertex at depth <= kMinDepth are skipped.
RasterOutput rasterize(const ScreenVertices& screen, const Faces& faces, int width, int height);

// Screen-space (affine) barycentrics of point p in triangle (s0, s1, s2).
// Returns false for a degenerate triangle.
bool screenBarycentrics(const Eigen::Vector2d& s0,
                        const Eigen::Vector2d& s1,
                        const Eigen::Vector2d& s2,
                        const Eigen::Vector2d& p,
                        Eigen::Vector3d& lambda);

// Per covered pixel, sum_k b_k attr(face_k). Rows: pixels (row-major image
// order); uncovered pixels are zero.
Eigen::MatrixXd interpolateAttributes(const RasterOutput& raster,
                                      const Faces& faces,
                                      const Eigen::MatrixXd& attributes);

// Gradient of perspective-correct barycentrics at `pixel` w.r.t. the screen
// positions and depths of the triangle's corners.
void barycentricBackward(const ScreenVertices& screen,
                         const Eigen::Vector3i& face,
                         int pixel,
                         int width,
                         const Eigen::Vector3d& gradBary,
                         Eigen::MatrixX2d& gradPixel,
                         Eigen::VectorXd& gradDepth);

// Area-weighted vertex normals. Vertices with no accumulated area get (0, 0, 1)
// and are counted in `flagged`.
Positions computeVertexNormals(const Positions& positions, const Faces& faces, int* flagged = nullptr);

// Gradient w.r.t. positions given the gradient w.r.t. computeVertexNormals.
Positions vertexNormalsBackward(const Positions& positions, const Faces& faces, const Positions& gradNormals);

// Shader MLP: input z (latent) + n + omega + h_k, three fully-connected
// layers, logistic output.
struct AppearanceConfig {
  int latentDim = 8;
  int cameraLatentDim = 4;
  int hiddenUnits = 64;
};

struct NeuralAppearance {
  AppearanceConfig config;
  LatentMatrix vertexLatents;            // N x latentDim
  Mlp shader;                            // (latentDim + 6 + cameraLatentDim) -> 64 -> 64 -> 3
  Eigen::MatrixXd cameraLatents;         // cameraLatentDim x views

  static NeuralAppearance create(const AppearanceConfig& config, int vertexCount, int viewCount);
  void initialize(std::uint64_t seed);
  int shaderInputSize() const { return config.latentDim + 6 + config.cameraLatentDim; }
};

double logistic(double x);

// Single-pixel shade; the batched path inside renderFrame is equivalent.
Eigen::Vector3d shade(const Mlp& shader,
                      const Eigen::VectorXd& latent,
                      const Eigen::Vector3d& normal,
                      const Eigen::Vector3d& viewDir,
                      const Eigen::VectorXd& cameraLatent);

// Edge list with the (up to two) adjacent faces; f1 = -1 on boundary edges.
struct MeshEdges {
  std::vector<std::array<int, 4>> edges;  // a, b, f0, f1
};
MeshEdges buildMeshEdges(const Faces& faces);

// Differentiable silhouette coverage: logistic(d / sigma), d the signed distance
// from the pixel center to the nearest silhouette edge (positive when the pixel
// is covered). Pixels farther than 3 sigma from every silhouette edge saturate
// to 0 or 1 exactly.
struct SoftMask {
  Image coverage;
  struct Sample {
    int pixel = 0;
    int a = 0;
    int b = 0;
    double t = 0.0;       // closest point parameter on segment (a, b)
    double sign = 1.0;
    Eigen::Vector2d direction = Eigen::Vector2d::Zero();  // unit (pixel - closest point)
  };
  std::vector<Sample> samples;  // band pixels only
  double sigma = 1.0;
  int silhouetteEdges = 0;
};

SoftMask softMask(const ScreenVertices& screen,
                  const Faces& faces,
                  const MeshEdges& edges,
                  const RasterOutput& raster,
                  double sigma);
SoftMask softMask(const ScreenVertices& screen, const Faces& faces, int width, int height, double sigma);

// Accumulates d(loss)/d(screen pixel positions) given d(loss)/d(coverage).
void softMaskBackward(const SoftMask& mask, const Image& gradCoverage, Eigen::MatrixX2d& gradPixel);

// ---- losses ----

// Mean |soft - observed| over pixels (sum when `normalize` is false).
double maskLoss(const Image& soft, const Image& observed, bool normalize = true, Image* grad = nullptr);

// sum |M (rendered - observed)| / (3 * #mask pixels) (sum when `normalize` is
// false). Empty mask gives 0 and sets `emptyMask`.
double photometricLoss(const Image& rendered,
                       const Image& observed,
                       const Image& mask,
                       bool normalize = true,
                       Image* grad = nullptr,
                       bool* emptyMask = nullptr);

// ||L U||_F^2.
double latentLaplacianLoss(const SparseOperator& laplacian, const LatentMatrix& latents, LatentMatrix* grad = nullptr);

// ---- deferred pipeline ----

struct RenderCache {
  Positions world;
  Positions rawNormals;   // unnormalized accumulated face normals
  Positions normals;
  ScreenVertices screen;
  RasterOutput raster;
  SoftMask mask;
  Eigen::Vector3d cameraCenter = Eigen::Vector3d::Zero();
  int view = 0;
  std::vector<int> pixels;            // covered pixels, in image order
  Eigen::MatrixXd shaderInput;        // inputSize x pixels
  Eigen::MatrixXd interpNormal;       // 3 x pixels, before normalization
  Eigen::MatrixXd viewVector;         // 3 x pixels, camera center - surface point
  Eigen::MatrixXd rgb;                // 3 x pixels
  Mlp::Cache shaderCache;
  bool valid = false;
};

struct FrameRender {
  Image image;   // RGB, black background
  Image mask;    // soft coverage
  RasterOutput raster;
};

FrameRender renderFrame(const Positions& world,
                        const Faces& faces,
                        const MeshEdges& edges,
                        const Camera& camera,
                        const NeuralAppearance& appearance,
                        double sigma,
                        RenderCache* cache = nullptr);

struct RenderGradients {
  Positions vertices;          // world space
  LatentMatrix latents;
  Eigen::VectorXd shader;
  Eigen::VectorXd cameraLatent;
};

// Exact adjoint of renderFrame for fixed face assignment. Geometry receives
// gradient through barycentrics, normals and view directions of covered pixels,
// and through the soft mask; face-id changes carry none.
RenderGradients renderBackward(const RenderCache& cache,
                               const Faces& faces,
                               const Camera& camera,
                               const NeuralAppearance& appearance,
                               const Image& gradImage,
                               const Image& gradMask);

}  // namespace blendrig
