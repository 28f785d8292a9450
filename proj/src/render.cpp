#include "blendrig/render.h"

#include "blendrig/error.h"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <utility>

namespace blendrig {

namespace {

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

constexpr double kDegenerateArea = 1e-12;
constexpr double kTinyNorm = 1e-12;
// How far past a candidate silhouette edge we probe the raster (pixels).
constexpr double kSilhouetteProbe = 1.5;
constexpr double kBandWidth = 3.0;

Eigen::Vector2d pixelCenter(int pixel, int width) {
  return {static_cast<double>(pixel % width) + 0.5, static_cast<double>(pixel / width) + 0.5};
}

}  // namespace

Image RasterOutput::coverage() const {
  Image img(width, height, 1);
  for (int p = 0; p < width * height; ++p) {
    img.data[static_cast<size_t>(p)] = covered(p) ? 1.0 : 0.0;
  }
  return img;
}

ScreenVertices projectVertices(const Camera& camera, const Positions& world) {
  ScreenVertices out;
  out.pixel.resize(world.rows(), 2);
  out.depth.resize(world.rows());
  for (Eigen::Index v = 0; v < world.rows(); ++v) {
    const Projection p = project(camera, world.row(v).transpose());
    out.pixel.row(v) = p.pixel.transpose();
    out.depth(v) = p.valid ? p.depth : std::min(p.depth, 0.0);
  }
  return out;
}

bool screenBarycentrics(const Eigen::Vector2d& s0,
                        const Eigen::Vector2d& s1,
                        const Eigen::Vector2d& s2,
                        const Eigen::Vector2d& p,
                        Eigen::Vector3d& lambda) {
  const double area = cross2(s1 - s0, s2 - s0);
  if (!(std::abs(area) > kDegenerateArea)) {
    return false;
  }
  lambda(0) = cross2(s1 - p, s2 - p) / area;
  lambda(1) = cross2(s2 - p, s0 - p) / area;
  lambda(2) = cross2(s0 - p, s1 - p) / area;
  return true;
}

RasterOutput rasterize(const ScreenVertices& screen, const Faces& faces, int width, int height) {
  if (width <= 0 || height <= 0) {
    throw InputError("raster size must be positive");
  }
  RasterOutput out;
  out.width = width;
  out.height = height;
  const auto count = static_cast<size_t>(width) * height;
  out.faceId.assign(count, -1);
  out.barycentric.assign(count, Eigen::Vector3d::Zero());
  out.depth.assign(count, std::numeric_limits<double>::infinity());

  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const int i0 = faces(f, 0);
    const int i1 = faces(f, 1);
    const int i2 = faces(f, 2);
    if (!screen.valid(i0) || !screen.valid(i1) || !screen.valid(i2)) {
      continue;
    }
    const Eigen::Vector2d s0 = screen.pixel.row(i0).transpose();
    const Eigen::Vector2d s1 = screen.pixel.row(i1).transpose();
    const Eigen::Vector2d s2 = screen.pixel.row(i2).transpose();
    if (!s0.allFinite() || !s1.allFinite() || !s2.allFinite() ||
        !(std::abs(cross2(s1 - s0, s2 - s0)) > kDegenerateArea)) {
      continue;
    }
    const double minX = std::min({s0.x(), s1.x(), s2.x()});
    const double maxX = std::max({s0.x(), s1.x(), s2.x()});
    const double minY = std::min({s0.y(), s1.y(), s2.y()});
    const double maxY = std::max({s0.y(), s1.y(), s2.y()});
    const int c0 = std::max(0, static_cast<int>(std::ceil(minX - 0.5)));
    const int c1 = std::min(width - 1, static_cast<int>(std::floor(maxX - 0.5)));
    const int r0 = std::max(0, static_cast<int>(std::ceil(minY - 0.5)));
    const int r1 = std::min(height - 1, static_cast<int>(std::floor(maxY - 0.5)));
    const Eigen::Vector3d invZ(1.0 / screen.depth(i0), 1.0 / screen.depth(i1), 1.0 / screen.depth(i2));
    for (int row = r0; row <= r1; ++row) {
      for (int col = c0; col <= c1; ++col) {
        Eigen::Vector3d lambda;
        const Eigen::Vector2d p(col + 0.5, row + 0.5);
        screenBarycentrics(s0, s1, s2, p, lambda);
        if (lambda(0) < 0.0 || lambda(1) < 0.0 || lambda(2) < 0.0) {
          continue;
        }
        const Eigen::Vector3d w = lambda.cwiseProduct(invZ);
        const double sum = w.sum();
        const double depth = 1.0 / sum;
        const auto idx = static_cast<size_t>(row) * width + col;
        if (depth < out.depth[idx]) {
          out.depth[idx] = depth;
          out.faceId[idx] = static_cast<int>(f);
          out.barycentric[idx] = w / sum;
        }
      }
    }
  }
  return out;
}

Eigen::MatrixXd interpolateAttributes(const RasterOutput& raster,
                                      const Faces& faces,
                                      const Eigen::MatrixXd& attributes) {
  const int count = raster.width * raster.height;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(count, attributes.cols());
  for (int p = 0; p < count; ++p) {
    const int f = raster.faceId[static_cast<size_t>(p)];
    if (f < 0) {
      continue;
    }
    const Eigen::Vector3d& b = raster.barycentric[static_cast<size_t>(p)];
    for (int k = 0; k < 3; ++k) {
      out.row(p) += b(k) * attributes.row(faces(f, k));
    }
  }
  return out;
}

void barycentricBackward(const ScreenVertices& screen,
                         const Eigen::Vector3i& face,
                         int pixel,
                         int width,
                         const Eigen::Vector3d& gradBary,
                         Eigen::MatrixX2d& gradPixel,
                         Eigen::VectorXd& gradDepth) {
  Eigen::Vector2d s[3];
  Eigen::Vector3d z;
  for (int k = 0; k < 3; ++k) {
    s[k] = screen.pixel.row(face(k)).transpose();
    z(k) = screen.depth(face(k));
  }
  const Eigen::Vector2d p = pixelCenter(pixel, width);
  Eigen::Vector3d lambda;
  if (!screenBarycentrics(s[0], s[1], s[2], p, lambda)) {
    return;
  }
  const double area = cross2(s[1] - s[0], s[2] - s[0]);
  const Eigen::Vector3d w = lambda.cwiseQuotient(z);
  const double sum = w.sum();
  const Eigen::Vector3d b = w / sum;
  // b = w / sum(w), w_k = lambda_k / z_k.
  const Eigen::Vector3d gw = (gradBary - Eigen::Vector3d::Constant(gradBary.dot(b))) / sum;
  const Eigen::Vector3d gLambda = gw.cwiseQuotient(z);
  for (int k = 0; k < 3; ++k) {
    gradDepth(face(k)) -= gw(k) * lambda(k) / (z(k) * z(k));
  }
  // lambda_k = A_k / A with A = sum_k A_k.
  const double shared = gLambda.dot(lambda);
  for (int k = 0; k < 3; ++k) {
    const double c = (gLambda(k) - shared) / area;
    const int k1 = (k + 1) % 3;
    const int k2 = (k + 2) % 3;
    const Eigen::Vector2d u = s[k1] - p;
    const Eigen::Vector2d v = s[k2] - p;
    gradPixel.row(face(k1)) += c * Eigen::RowVector2d(v.y(), -v.x());
    gradPixel.row(face(k2)) += c * Eigen::RowVector2d(-u.y(), u.x());
  }
}

namespace {

Positions accumulateFaceNormals(const Positions& positions, const Faces& faces) {
  Positions raw = Positions::Zero(positions.rows(), 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Eigen::Vector3d x0 = positions.row(faces(f, 0)).transpose();
    const Eigen::Vector3d c =
        (positions.row(faces(f, 1)).transpose() - x0).cross(positions.row(faces(f, 2)).transpose() - x0);
    for (int k = 0; k < 3; ++k) {
      raw.row(faces(f, k)) += c.transpose();
    }
  }
  return raw;
}

Positions normalizeRows(const Positions& raw, int* flagged) {
  Positions n(raw.rows(), 3);
  int bad = 0;
  for (Eigen::Index v = 0; v < raw.rows(); ++v) {
    const double len = raw.row(v).norm();
    if (len > kTinyNorm) {
      n.row(v) = raw.row(v) / len;
    } else {
      n.row(v) << 0.0, 0.0, 1.0;
      ++bad;
    }
  }
  if (flagged != nullptr) {
    *flagged = bad;
  }
  return n;
}

Positions normalsBackwardFromRaw(const Positions& positions,
                                 const Faces& faces,
                                 const Positions& raw,
                                 const Positions& gradNormals) {
  Positions gRaw = Positions::Zero(raw.rows(), 3);
  for (Eigen::Index v = 0; v < raw.rows(); ++v) {
    const double len = raw.row(v).norm();
    if (!(len > kTinyNorm)) {
      continue;
    }
    const Eigen::RowVector3d n = raw.row(v) / len;
    const Eigen::RowVector3d g = gradNormals.row(v);
    gRaw.row(v) = (g - n * n.dot(g)) / len;
  }
  Positions grad = Positions::Zero(positions.rows(), 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const int i0 = faces(f, 0);
    const int i1 = faces(f, 1);
    const int i2 = faces(f, 2);
    const Eigen::Vector3d gc = (gRaw.row(i0) + gRaw.row(i1) + gRaw.row(i2)).transpose();
    if (gc.isZero(0.0)) {
      continue;
    }
    const Eigen::Vector3d e1 = (positions.row(i1) - positions.row(i0)).transpose();
    const Eigen::Vector3d e2 = (positions.row(i2) - positions.row(i0)).transpose();
    const Eigen::Vector3d g1 = e2.cross(gc);
    const Eigen::Vector3d g2 = gc.cross(e1);
    grad.row(i1) += g1.transpose();
    grad.row(i2) += g2.transpose();
    grad.row(i0) -= (g1 + g2).transpose();
  }
  return grad;
}

}  // namespace

Positions computeVertexNormals(const Positions& positions, const Faces& faces, int* flagged) {
  return normalizeRows(accumulateFaceNormals(positions, faces), flagged);
}

Positions vertexNormalsBackward(const Positions& positions, const Faces& faces, const Positions& gradNormals) {
  return normalsBackwardFromRaw(positions, faces, accumulateFaceNormals(positions, faces), gradNormals);
}

NeuralAppearance NeuralAppearance::create(const AppearanceConfig& config, int vertexCount, int viewCount) {
  if (config.latentDim <= 0 || config.cameraLatentDim < 0 || config.hiddenUnits <= 0) {
    throw InputError("invalid appearance configuration");
  }
  NeuralAppearance a;
  a.config = config;
  a.vertexLatents = LatentMatrix::Zero(vertexCount, config.latentDim);
  a.shader = Mlp({a.shaderInputSize(), config.hiddenUnits, config.hiddenUnits, 3});
  a.cameraLatents = Eigen::MatrixXd::Zero(config.cameraLatentDim, viewCount);
  return a;
}

void NeuralAppearance::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.01);
  for (Eigen::Index k = 0; k < vertexLatents.size(); ++k) {
    vertexLatents.data()[k] = dist(rng);
  }
  shader.initializeHe(seed ^ 0x5bd1e995ULL);
  cameraLatents.setZero();
}

double logistic(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::Vector3d shade(const Mlp& shader,
                      const Eigen::VectorXd& latent,
                      const Eigen::Vector3d& normal,
                      const Eigen::Vector3d& viewDir,
                      const Eigen::VectorXd& cameraLatent) {
  Eigen::VectorXd input(latent.size() + 6 + cameraLatent.size());
  input << latent, normal, viewDir, cameraLatent;
  if (input.size() != shader.inputSize()) {
    throw InputError(detail::concat("shader input has ", input.size(), " entries, expected ", shader.inputSize()));
  }
  const Eigen::VectorXd logits = shader.forward(input).col(0);
  return {logistic(logits(0)), logistic(logits(1)), logistic(logits(2))};
}

MeshEdges buildMeshEdges(const Faces& faces) {
  std::map<std::pair<int, int>, std::array<int, 4>> table;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int a = faces(f, k);
      const int b = faces(f, (k + 1) % 3);
      const auto key = std::minmax(a, b);
      auto it = table.find(key);
      if (it == table.end()) {
        table.emplace(key, std::array<int, 4>{key.first, key.second, static_cast<int>(f), -1});
      } else if (it->second[3] < 0) {
        it->second[3] = static_cast<int>(f);
      } else {
        throw InputError(detail::concat("non-manifold edge (", a, ", ", b, ")"));
      }
    }
  }
  MeshEdges out;
  out.edges.reserve(table.size());
  for (const auto& [key, e] : table) {
    out.edges.push_back(e);
  }
  return out;
}

SoftMask softMask(const ScreenVertices& screen,
                  const Faces& faces,
                  const MeshEdges& edges,
                  const RasterOutput& raster,
                  double sigma) {
  if (!(sigma > 0.0)) {
    throw InputError("soft mask sigma must be positive");
  }
  const int width = raster.width;
  const int height = raster.height;
  SoftMask out;
  out.sigma = sigma;
  out.coverage = raster.coverage();

  auto faceValid = [&](int f) {
    return screen.valid(faces(f, 0)) && screen.valid(faces(f, 1)) && screen.valid(faces(f, 2));
  };
  auto faceSign = [&](int f) {
    const Eigen::Vector2d s0 = screen.pixel.row(faces(f, 0)).transpose();
    return cross2(screen.pixel.row(faces(f, 1)).transpose() - s0, screen.pixel.row(faces(f, 2)).transpose() - s0) >=
           0.0;
  };

  std::vector<std::pair<int, int>> kept;  // (a, b)
  for (const auto& e : edges.edges) {
    const int f0 = e[2];
    const int f1 = e[3];
    if (!faceValid(f0) || (f1 >= 0 && !faceValid(f1))) {
      continue;
    }
    if (f1 >= 0 && faceSign(f0) == faceSign(f1)) {
      continue;
    }
    const Eigen::Vector2d a = screen.pixel.row(e[0]).transpose();
    const Eigen::Vector2d b = screen.pixel.row(e[1]).transpose();
    const Eigen::Vector2d d = b - a;
    const double len = d.norm();
    if (!(len > kTinyNorm)) {
      continue;
    }
    int third = 0;
    for (int k = 0; k < 3; ++k) {
      const int v = faces(f0, k);
      if (v != e[0] && v != e[1]) {
        third = v;
      }
    }
    Eigen::Vector2d normal(-d.y() / len, d.x() / len);
    if (normal.dot(screen.pixel.row(third).transpose() - a) > 0.0) {
      normal = -normal;
    }
    const Eigen::Vector2d probe = 0.5 * (a + b) + kSilhouetteProbe * normal;
    const int col = static_cast<int>(std::floor(probe.x()));
    const int row = static_cast<int>(std::floor(probe.y()));
    if (col >= 0 && col < width && row >= 0 && row < height && raster.covered(row * width + col)) {
      continue;
    }
    kept.emplace_back(e[0], e[1]);
  }
  out.silhouetteEdges = static_cast<int>(kept.size());

  const double band = kBandWidth * sigma;
  std::vector<std::pair<int, int>> candidates;  // (pixel, kept edge)
  for (size_t k = 0; k < kept.size(); ++k) {
    const Eigen::Vector2d a = screen.pixel.row(kept[k].first).transpose();
    const Eigen::Vector2d b = screen.pixel.row(kept[k].second).transpose();
    const int c0 = std::max(0, static_cast<int>(std::ceil(std::min(a.x(), b.x()) - band - 0.5)));
    const int c1 = std::min(width - 1, static_cast<int>(std::floor(std::max(a.x(), b.x()) + band - 0.5)));
    const int r0 = std::max(0, static_cast<int>(std::ceil(std::min(a.y(), b.y()) - band - 0.5)));
    const int r1 = std::min(height - 1, static_cast<int>(std::floor(std::max(a.y(), b.y()) + band - 0.5)));
    for (int row = r0; row <= r1; ++row) {
      for (int col = c0; col <= c1; ++col) {
        candidates.emplace_back(row * width + col, static_cast<int>(k));
      }
    }
  }
  std::sort(candidates.begin(), candidates.end());

  for (size_t i = 0; i < candidates.size();) {
    const int pixel = candidates[i].first;
    const Eigen::Vector2d p = pixelCenter(pixel, width);
    double best = std::numeric_limits<double>::infinity();
    SoftMask::Sample sample;
    for (; i < candidates.size() && candidates[i].first == pixel; ++i) {
      const auto& edge = kept[static_cast<size_t>(candidates[i].second)];
      const Eigen::Vector2d a = screen.pixel.row(edge.first).transpose();
      const Eigen::Vector2d e = screen.pixel.row(edge.second).transpose() - a;
      const double t = std::clamp((p - a).dot(e) / e.squaredNorm(), 0.0, 1.0);
      const Eigen::Vector2d r = p - (a + t * e);
      const double dist = r.norm();
      if (dist < best) {
        best = dist;
        sample.a = edge.first;
        sample.b = edge.second;
        sample.t = t;
        sample.direction = dist > 0.0 ? Eigen::Vector2d(r / dist) : Eigen::Vector2d::Zero();
      }
    }
    if (!(best < band)) {
      continue;
    }
    sample.pixel = pixel;
    sample.sign = raster.covered(pixel) ? 1.0 : -1.0;
    out.coverage.data[static_cast<size_t>(pixel)] = logistic(sample.sign * best / sigma);
    out.samples.push_back(sample);
  }
  return out;
}

SoftMask softMask(const ScreenVertices& screen, const Faces& faces, int width, int height, double sigma) {
  return softMask(screen, faces, buildMeshEdges(faces), rasterize(screen, faces, width, height), sigma);
}

void softMaskBackward(const SoftMask& mask, const Image& gradCoverage, Eigen::MatrixX2d& gradPixel) {
  for (const auto& s : mask.samples) {
    const double g = gradCoverage.data[static_cast<size_t>(s.pixel)];
    if (g == 0.0) {
      continue;
    }
    const double c = mask.coverage.data[static_cast<size_t>(s.pixel)];
    // d(dist)/d(closest point) = -direction; closest = (1 - t) a + t b.
    const double gd = g * c * (1.0 - c) * s.sign / mask.sigma;
    gradPixel.row(s.a) -= gd * (1.0 - s.t) * s.direction.transpose();
    gradPixel.row(s.b) -= gd * s.t * s.direction.transpose();
  }
}

double maskLoss(const Image& soft, const Image& observed, bool normalize, Image* grad) {
  if (soft.width != observed.width || soft.height != observed.height || soft.channels != 1 ||
      observed.channels != 1) {
    throw InputError("mask loss expects two single-channel images of equal size");
  }
  const double scale = normalize ? 1.0 / soft.pixelCount() : 1.0;
  if (grad != nullptr) {
    *grad = Image(soft.width, soft.height, 1);
  }
  double loss = 0.0;
  for (size_t i = 0; i < soft.data.size(); ++i) {
    const double d = soft.data[i] - observed.data[i];
    loss += std::abs(d);
    if (grad != nullptr) {
      grad->data[i] = scale * static_cast<double>((d > 0.0) - (d < 0.0));
    }
  }
  return loss * scale;
}

double photometricLoss(const Image& rendered,
                       const Image& observed,
                       const Image& mask,
                       bool normalize,
                       Image* grad,
                       bool* emptyMask) {
  if (rendered.width != observed.width || rendered.height != observed.height || rendered.channels != 3 ||
      observed.channels != 3 || mask.width != rendered.width || mask.height != rendered.height ||
      mask.channels != 1) {
    throw InputError("photometric loss expects RGB images and a mask of equal size");
  }
  if (grad != nullptr) {
    *grad = Image(rendered.width, rendered.height, 3);
  }
  int count = 0;
  for (double m : mask.data) {
    count += m > 0.5 ? 1 : 0;
  }
  if (emptyMask != nullptr) {
    *emptyMask = count == 0;
  }
  if (count == 0) {
    return 0.0;
  }
  const double scale = normalize ? 1.0 / (3.0 * count) : 1.0;
  double loss = 0.0;
  for (int p = 0; p < mask.pixelCount(); ++p) {
    if (!(mask.data[static_cast<size_t>(p)] > 0.5)) {
      continue;
    }
    for (int c = 0; c < 3; ++c) {
      const auto i = static_cast<size_t>(p) * 3 + c;
      const double d = rendered.data[i] - observed.data[i];
      loss += std::abs(d);
      if (grad != nullptr) {
        grad->data[i] = scale * static_cast<double>((d > 0.0) - (d < 0.0));
      }
    }
  }
  return loss * scale;
}

double latentLaplacianLoss(const SparseOperator& laplacian, const LatentMatrix& latents, LatentMatrix* grad) {
  if (laplacian.rows() != latents.rows()) {
    throw InputError("latent Laplacian size mismatch");
  }
  const Eigen::MatrixXd lu = laplacian * latents;
  if (grad != nullptr) {
    *grad = 2.0 * (laplacian.transpose() * lu);
  }
  return lu.squaredNorm();
}

FrameRender renderFrame(const Positions& world,
                        const Faces& faces,
                        const MeshEdges& edges,
                        const Camera& camera,
                        const NeuralAppearance& appearance,
                        double sigma,
                        RenderCache* cache) {
  if (appearance.vertexLatents.rows() != world.rows()) {
    throw InputError("vertex latent count does not match the mesh");
  }
  if (camera.view < 0 || camera.view >= appearance.cameraLatents.cols()) {
    throw InputError(detail::concat("camera view ", camera.view, " has no latent code"));
  }
  RenderCache local;
  RenderCache& c = cache != nullptr ? *cache : local;
  c.world = world;
  c.view = camera.view;
  c.cameraCenter = camera.center();
  c.screen = projectVertices(camera, world);
  c.raster = rasterize(c.screen, faces, camera.width, camera.height);
  c.rawNormals = accumulateFaceNormals(world, faces);
  c.normals = normalizeRows(c.rawNormals, nullptr);
  c.mask = softMask(c.screen, faces, edges, c.raster, sigma);

  c.pixels.clear();
  for (int p = 0; p < camera.width * camera.height; ++p) {
    if (c.raster.covered(p)) {
      c.pixels.push_back(p);
    }
  }
  const int dz = appearance.config.latentDim;
  const int dh = appearance.config.cameraLatentDim;
  const auto count = static_cast<Eigen::Index>(c.pixels.size());
  c.shaderInput.resize(appearance.shaderInputSize(), count);
  c.interpNormal.resize(3, count);
  c.viewVector.resize(3, count);
  const Eigen::VectorXd h = appearance.cameraLatents.col(camera.view);
  for (Eigen::Index k = 0; k < count; ++k) {
    const auto p = static_cast<size_t>(c.pixels[static_cast<size_t>(k)]);
    const int f = c.raster.faceId[p];
    const Eigen::Vector3d& b = c.raster.barycentric[p];
    Eigen::VectorXd z = Eigen::VectorXd::Zero(dz);
    Eigen::Vector3d m = Eigen::Vector3d::Zero();
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    for (int j = 0; j < 3; ++j) {
      const int v = faces(f, j);
      z += b(j) * appearance.vertexLatents.row(v).transpose();
      m += b(j) * c.normals.row(v).transpose();
      point += b(j) * world.row(v).transpose();
    }
    const Eigen::Vector3d w = c.cameraCenter - point;
    const double mn = m.norm();
    c.interpNormal.col(k) = m;
    c.viewVector.col(k) = w;
    c.shaderInput.col(k).head(dz) = z;
    c.shaderInput.col(k).segment<3>(dz) = mn > kTinyNorm ? Eigen::Vector3d(m / mn) : Eigen::Vector3d::UnitZ();
    c.shaderInput.col(k).segment<3>(dz + 3) = w / w.norm();
    c.shaderInput.col(k).tail(dh) = h;
  }
  const Eigen::MatrixXd logits = appearance.shader.forward(c.shaderInput, &c.shaderCache);
  c.rgb = logits.unaryExpr([](double x) { return logistic(x); });
  c.valid = true;

  FrameRender out;
  out.image = Image(camera.width, camera.height, 3);
  for (Eigen::Index k = 0; k < count; ++k) {
    const auto p = static_cast<size_t>(c.pixels[static_cast<size_t>(k)]);
    for (int ch = 0; ch < 3; ++ch) {
      out.image.data[p * 3 + static_cast<size_t>(ch)] = c.rgb(ch, k);
    }
  }
  out.mask = c.mask.coverage;
  out.raster = c.raster;
  return out;
}

RenderGradients renderBackward(const RenderCache& cache,
                               const Faces& faces,
                               const Camera& camera,
                               const NeuralAppearance& appearance,
                               const Image& gradImage,
                               const Image& gradMask) {
  if (!cache.valid) {
    throw InputError("render backward called without a forward cache");
  }
  const Eigen::Index n = cache.world.rows();
  const int dz = appearance.config.latentDim;
  const int dh = appearance.config.cameraLatentDim;
  const int width = cache.raster.width;
  RenderGradients g;
  g.vertices = Positions::Zero(n, 3);
  g.latents = LatentMatrix::Zero(n, dz);
  g.shader = Eigen::VectorXd::Zero(appearance.shader.parameters().size());
  g.cameraLatent = Eigen::VectorXd::Zero(dh);

  Eigen::MatrixX2d gPixel = Eigen::MatrixX2d::Zero(n, 2);
  Eigen::VectorXd gDepth = Eigen::VectorXd::Zero(n);
  Positions gNormals = Positions::Zero(n, 3);

  const auto count = static_cast<Eigen::Index>(cache.pixels.size());
  if (count > 0) {
    Eigen::MatrixXd gLogits(3, count);
    for (Eigen::Index k = 0; k < count; ++k) {
      const auto p = static_cast<size_t>(cache.pixels[static_cast<size_t>(k)]);
      for (int ch = 0; ch < 3; ++ch) {
        const double r = cache.rgb(ch, k);
        gLogits(ch, k) = gradImage.data[p * 3 + static_cast<size_t>(ch)] * r * (1.0 - r);
      }
    }
    const Eigen::MatrixXd gInput = appearance.shader.backward(cache.shaderCache, gLogits, g.shader);
    g.cameraLatent = gInput.bottomRows(dh).rowwise().sum();

    for (Eigen::Index k = 0; k < count; ++k) {
      const int pixel = cache.pixels[static_cast<size_t>(k)];
      const auto p = static_cast<size_t>(pixel);
      const int f = cache.raster.faceId[p];
      const Eigen::Vector3d& b = cache.raster.barycentric[p];
      const Eigen::VectorXd gz = gInput.col(k).head(dz);
      const Eigen::Vector3d gn = gInput.col(k).segment<3>(dz);
      const Eigen::Vector3d gOmega = gInput.col(k).segment<3>(dz + 3);

      const Eigen::Vector3d m = cache.interpNormal.col(k);
      const double mn = m.norm();
      Eigen::Vector3d gm = Eigen::Vector3d::Zero();
      if (mn > kTinyNorm) {
        const Eigen::Vector3d nh = m / mn;
        gm = (gn - nh * nh.dot(gn)) / mn;
      }
      const Eigen::Vector3d w = cache.viewVector.col(k);
      const double wn = w.norm();
      const Eigen::Vector3d om = w / wn;
      const Eigen::Vector3d gPoint = -(gOmega - om * om.dot(gOmega)) / wn;

      Eigen::Vector3d gb;
      for (int j = 0; j < 3; ++j) {
        const int v = faces(f, j);
        g.latents.row(v) += b(j) * gz.transpose();
        gNormals.row(v) += b(j) * gm.transpose();
        g.vertices.row(v) += b(j) * gPoint.transpose();
        gb(j) = appearance.vertexLatents.row(v).dot(gz) + cache.normals.row(v).dot(gm) +
                cache.world.row(v).dot(gPoint);
      }
      barycentricBackward(cache.screen, faces.row(f).transpose(), pixel, width, gb, gPixel, gDepth);
    }
  }

  softMaskBackward(cache.mask, gradMask, gPixel);

  for (Eigen::Index v = 0; v < n; ++v) {
    if (gPixel(v, 0) == 0.0 && gPixel(v, 1) == 0.0 && gDepth(v) == 0.0) {
      continue;
    }
    if (!cache.screen.valid(static_cast<int>(v))) {
      continue;
    }
    const Eigen::Matrix3d jac = projectJacobian(camera, cache.world.row(v).transpose());
    g.vertices.row(v) += (jac.transpose() * Eigen::Vector3d(gPixel(v, 0), gPixel(v, 1), gDepth(v))).transpose();
  }
  g.vertices += normalsBackwardFromRaw(cache.world, faces, cache.rawNormals, gNormals);
  return g;
}

}  // namespace blendrig
