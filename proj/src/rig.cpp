#include "blendrig/rig.h"

#include "blendrig/error.h"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace blendrig {

namespace {

// Left vertices own the data of symmetric blendshapes.
enum class Side { Left, Right, Midline };

Side sideOf(int v, const std::vector<int>& mirror, const Positions& ref) {
  const int m = mirror[static_cast<size_t>(v)];
  if (m == v) {
    return Side::Midline;
  }
  return ref(v, 0) > ref(m, 0) ? Side::Left : Side::Right;
}

void checkMirrorInputs(const Eigen::MatrixXd& basis,
                       const std::vector<SymmetryPair>& symmetry,
                       const std::vector<int>& mirror,
                       const Positions& ref) {
  const auto n = static_cast<int>(ref.rows());
  validateMirrorMap(mirror, n);
  if (basis.rows() != 3 * static_cast<Eigen::Index>(n)) {
    throw InputError("mirror update: basis row count does not match 3N");
  }
  for (const auto& s : symmetry) {
    if (s.left < 0 || s.right < 0 || s.left >= basis.cols() || s.right >= basis.cols()) {
      throw InputError("mirror update: symmetry entry out of range");
    }
  }
}

}  // namespace

Positions BlendshapeRig::blendshapePositions(int j) const {
  Positions out = neutral.vertices;
  Eigen::Map<Eigen::VectorXd>(out.data(), out.size()) += basis.col(j);
  return out;
}

void BlendshapeRig::validate() const {
  neutral.validate();
  const int n = vertexCount();
  if (basis.rows() != 3 * static_cast<Eigen::Index>(n)) {
    throw InputError(detail::concat("basis has ", basis.rows(), " rows, expected 3N = ", 3 * n));
  }
  if (static_cast<int>(names.size()) != basisCount()) {
    throw InputError("blendshape name count does not match basis column count");
  }
  std::unordered_set<std::string> seen;
  for (const auto& name : names) {
    if (!seen.insert(name).second) {
      throw InputError("duplicate blendshape name '" + name + "'");
    }
  }
  if (!basis.allFinite()) {
    throw InputError("basis has non-finite entries");
  }
  if (!mirrorMap.empty()) {
    validateMirrorMap(mirrorMap, n);
  }
  for (const auto& s : symmetry) {
    if (s.left < 0 || s.right < 0 || s.left >= basisCount() || s.right >= basisCount()) {
      throw InputError("symmetry entry out of range");
    }
  }
  if (!symmetry.empty() && mirrorMap.empty()) {
    throw InputError("symmetric blendshapes require a vertex mirror map");
  }
  for (const auto& a : landmarks) {
    if (a.face < 0 || a.face >= neutral.faceCount()) {
      throw InputError(detail::concat("landmark anchor face ", a.face, " out of range"));
    }
    if ((a.barycentric.array() < 0.0).any() || std::abs(a.barycentric.sum() - 1.0) > 1e-9) {
      throw InputError("landmark barycentrics must be nonnegative and sum to 1");
    }
  }
}

RigDeformation RigDeformation::zeros(int totalVertices, int basisCount) {
  RigDeformation d;
  d.neutral = Positions::Zero(totalVertices, 3);
  d.bases.assign(static_cast<size_t>(basisCount), Positions::Zero(totalVertices, 3));
  return d;
}

Positions evaluateExpression(const BlendshapeRig& rig, const Eigen::VectorXd& beta) {
  if (beta.size() != rig.basisCount()) {
    throw InputError(detail::concat("expected ", rig.basisCount(), " coefficients, got ", beta.size()));
  }
  Positions out = rig.neutral.vertices;
  Eigen::Map<Eigen::VectorXd>(out.data(), out.size()) += rig.basis * beta;
  return out;
}

std::vector<int> computeMirrorMap(const Positions& vertices, double tolerance) {
  const auto n = static_cast<int>(vertices.rows());
  // Sort by y to prune the nearest-neighbor search to a slab.
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    order[static_cast<size_t>(i)] = i;
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return vertices(a, 1) < vertices(b, 1) || (vertices(a, 1) == vertices(b, 1) && a < b);
  });
  std::vector<double> ys(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    ys[static_cast<size_t>(i)] = vertices(order[static_cast<size_t>(i)], 1);
  }
  std::vector<int> mirror(static_cast<size_t>(n), -1);
  for (int v = 0; v < n; ++v) {
    const Eigen::Vector3d reflected(-vertices(v, 0), vertices(v, 1), vertices(v, 2));
    const auto lo = std::lower_bound(ys.begin(), ys.end(), reflected.y() - tolerance) - ys.begin();
    double best = tolerance;
    int bestIdx = -1;
    for (auto k = lo; k < n && ys[static_cast<size_t>(k)] <= reflected.y() + tolerance; ++k) {
      const int c = order[static_cast<size_t>(k)];
      const double d = (vertices.row(c).transpose() - reflected).norm();
      if (d <= best) {
        if (d < best || bestIdx < 0 || c < bestIdx) {
          bestIdx = c;
        }
        best = d;
      }
    }
    if (bestIdx < 0) {
      throw InputError(detail::concat("vertex ", v, " has no mirror partner within ", tolerance));
    }
    mirror[static_cast<size_t>(v)] = bestIdx;
  }
  validateMirrorMap(mirror, n);
  return mirror;
}

void validateMirrorMap(const std::vector<int>& mirror, int vertexCount) {
  if (static_cast<int>(mirror.size()) != vertexCount) {
    throw InputError("mirror map size does not match vertex count");
  }
  for (int v = 0; v < vertexCount; ++v) {
    const int m = mirror[static_cast<size_t>(v)];
    if (m < 0 || m >= vertexCount || mirror[static_cast<size_t>(m)] != v) {
      throw InputError(detail::concat("mirror map is not an involution at vertex ", v));
    }
  }
}

Eigen::MatrixXd mirrorUpdate(const Eigen::MatrixXd& basis,
                             const std::vector<SymmetryPair>& symmetry,
                             const std::vector<int>& mirror,
                             const Positions& ref) {
  checkMirrorInputs(basis, symmetry, mirror, ref);
  Eigen::MatrixXd out = basis;
  const auto n = static_cast<int>(ref.rows());
  for (const auto& s : symmetry) {
    for (int v = 0; v < n; ++v) {
      const int m = mirror[static_cast<size_t>(v)];
      const Side side = sideOf(v, mirror, ref);
      if (s.left == s.right) {
        if (side == Side::Right) {
          out(3 * v, s.right) = -basis(3 * m, s.left);
          out(3 * v + 1, s.right) = basis(3 * m + 1, s.left);
          out(3 * v + 2, s.right) = basis(3 * m + 2, s.left);
        } else if (side == Side::Midline) {
          out(3 * v, s.right) = 0.0;
        }
      } else {
        out(3 * v, s.right) = -basis(3 * m, s.left);
        out(3 * v + 1, s.right) = basis(3 * m + 1, s.left);
        out(3 * v + 2, s.right) = basis(3 * m + 2, s.left);
      }
    }
  }
  return out;
}

Eigen::MatrixXd mirrorUpdateAdjoint(const Eigen::MatrixXd& gradient,
                                    const std::vector<SymmetryPair>& symmetry,
                                    const std::vector<int>& mirror,
                                    const Positions& ref) {
  checkMirrorInputs(gradient, symmetry, mirror, ref);
  Eigen::MatrixXd in = gradient;
  const auto n = static_cast<int>(ref.rows());
  // Every symmetry entry writes a distinct destination column, so entries are
  // independent as long as no column is both a source and a pair destination.
  for (const auto& s : symmetry) {
    if (s.left == s.right) {
      for (int v = 0; v < n; ++v) {
        const int m = mirror[static_cast<size_t>(v)];
        const Side side = sideOf(v, mirror, ref);
        if (side == Side::Right) {
          in(3 * m, s.left) -= gradient(3 * v, s.right);
          in(3 * m + 1, s.left) += gradient(3 * v + 1, s.right);
          in(3 * m + 2, s.left) += gradient(3 * v + 2, s.right);
          in(3 * v, s.right) = 0.0;
          in(3 * v + 1, s.right) = 0.0;
          in(3 * v + 2, s.right) = 0.0;
        } else if (side == Side::Midline) {
          in(3 * v, s.right) = 0.0;
        }
      }
    } else {
      for (int v = 0; v < n; ++v) {
        const int m = mirror[static_cast<size_t>(v)];
        in(3 * m, s.left) -= gradient(3 * v, s.right);
        in(3 * m + 1, s.left) += gradient(3 * v + 1, s.right);
        in(3 * m + 2, s.left) += gradient(3 * v + 2, s.right);
      }
      in.col(s.right).setZero();
    }
  }
  return in;
}

PersonalizedSurfaces personalizeSurfaces(const BlendshapeRig& templ,
                                         const RigDeformation& deformation,
                                         const DiffCoordSystem& system) {
  const int n = templ.vertexCount();
  const int m = templ.basisCount();
  if (static_cast<int>(deformation.bases.size()) != m) {
    throw InputError("deformation basis count does not match the rig");
  }
  if (deformation.neutral.rows() != system.dimension()) {
    throw InputError("deformation dimension does not match the differential system");
  }
  PersonalizedSurfaces out;
  out.neutral = templ.neutral.vertices;
  if (!deformation.neutral.isZero(0.0)) {
    out.neutral += system.fromDifferential(deformation.neutral).topRows(n);
  }
  out.basis = templ.basis;
  for (int j = 0; j < m; ++j) {
    // Zero offsets map to zero displacement; skip the solve.
    if (deformation.bases[static_cast<size_t>(j)].isZero(0.0)) {
      continue;
    }
    const Positions delta = system.fromDifferential(deformation.bases[static_cast<size_t>(j)]);
    const Positions surface = delta.topRows(n);
    out.basis.col(j) += Eigen::Map<const Eigen::VectorXd>(surface.data(), surface.size());
  }
  if (!templ.symmetry.empty()) {
    out.basis = mirrorUpdate(out.basis, templ.symmetry, templ.mirrorMap, templ.neutral.vertices);
  }
  return out;
}

BlendshapeRig personalize(const BlendshapeRig& templ,
                          const RigDeformation& deformation,
                          const DiffCoordSystem& system) {
  PersonalizedSurfaces surfaces = personalizeSurfaces(templ, deformation, system);
  BlendshapeRig out = templ;
  out.neutral.vertices = std::move(surfaces.neutral);
  out.basis = std::move(surfaces.basis);
  if (templ.hasFill() && system.dimension() > templ.vertexCount()) {
    const int n = templ.vertexCount();
    const int interior = system.dimension() - n;
    out.fill.interior =
        templ.fill.interior + system.fromDifferential(deformation.neutral).bottomRows(interior);
    // Blendshape interiors keep their template offsets relative to the new neutral.
    for (size_t j = 0; j < out.basisInterior.size(); ++j) {
      const Positions delta = system.fromDifferential(deformation.bases[j]).bottomRows(interior);
      out.basisInterior[j] = templ.basisInterior[j] - templ.fill.interior + out.fill.interior + delta;
    }
  }
  return out;
}

RigDeformation personalizeBackward(const BlendshapeRig& templ,
                                   const DiffCoordSystem& system,
                                   const Positions& gradNeutral,
                                   const Eigen::MatrixXd& gradBasis) {
  const int n = templ.vertexCount();
  const int total = system.dimension();
  RigDeformation grad;
  Positions padded = Positions::Zero(total, 3);
  padded.topRows(n) = gradNeutral;
  grad.neutral = system.adjointFromDifferential(padded);

  Eigen::MatrixXd g = gradBasis;
  if (!templ.symmetry.empty()) {
    g = mirrorUpdateAdjoint(gradBasis, templ.symmetry, templ.mirrorMap, templ.neutral.vertices);
  }
  grad.bases.resize(static_cast<size_t>(templ.basisCount()));
  for (int j = 0; j < templ.basisCount(); ++j) {
    if (g.col(j).isZero(0.0)) {
      grad.bases[static_cast<size_t>(j)] = Positions::Zero(total, 3);
      continue;
    }
    padded.setZero();
    padded.topRows(n) = Eigen::Map<const Positions>(g.col(j).data(), n, 3);
    grad.bases[static_cast<size_t>(j)] = system.adjointFromDifferential(padded);
  }
  return grad;
}

Eigen::VectorXd defaultLocalityScales(const Eigen::MatrixXd& basis) {
  const auto n = basis.rows() / 3;
  Eigen::VectorXd scales(basis.cols());
  std::vector<double> norms;
  for (Eigen::Index j = 0; j < basis.cols(); ++j) {
    norms.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = basis.col(j).segment<3>(3 * i).norm();
      if (v > 0.0) {
        norms.push_back(v);
      }
    }
    if (norms.empty()) {
      scales(j) = 1.0;
      continue;
    }
    const auto mid = norms.begin() + static_cast<std::ptrdiff_t>(norms.size() / 2);
    std::nth_element(norms.begin(), mid, norms.end());
    double median = *mid;
    if (norms.size() % 2 == 0) {
      median = 0.5 * (median + *std::max_element(norms.begin(), mid));
    }
    scales(j) = median;
  }
  return scales;
}

Eigen::MatrixXd localityWeights(const Eigen::MatrixXd& basis, const Eigen::VectorXd& scales) {
  if (scales.size() != basis.cols()) {
    throw InputError("one locality scale per blendshape is required");
  }
  if (!(scales.array() > 0.0).all()) {
    throw InputError("locality scale must be positive");
  }
  const auto n = basis.rows() / 3;
  Eigen::MatrixXd w(basis.rows(), basis.cols());
  for (Eigen::Index j = 0; j < basis.cols(); ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      w.col(j).segment<3>(3 * i).setConstant(std::exp(-basis.col(j).segment<3>(3 * i).norm() / scales(j)));
    }
  }
  return w;
}

Eigen::MatrixXd localityWeights(const Eigen::MatrixXd& basis, double scale) {
  if (!(scale > 0.0)) {
    throw InputError("locality scale must be positive");
  }
  return localityWeights(basis, Eigen::VectorXd::Constant(basis.cols(), scale));
}

double localityLoss(const Eigen::MatrixXd& weights,
                    const Eigen::MatrixXd& personalized,
                    const Eigen::MatrixXd& original,
                    Eigen::MatrixXd* grad) {
  if (weights.rows() != personalized.rows() || weights.cols() != personalized.cols() ||
      original.rows() != personalized.rows() || original.cols() != personalized.cols()) {
    throw InputError("locality loss: shape mismatch");
  }
  const Eigen::MatrixXd weighted = weights.cwiseProduct(personalized - original);
  const double value = weighted.norm();
  if (grad != nullptr) {
    if (value > 0.0) {
      *grad = weights.cwiseProduct(weighted) / value;
    } else {
      *grad = Eigen::MatrixXd::Zero(weights.rows(), weights.cols());
    }
  }
  return value;
}

double smoothedMagnitude(double d, double epsilon) {
  const double a = std::abs(d);
  if (a >= epsilon) {
    return a;
  }
  return 2.0 * a * a / epsilon - a * a * a / (epsilon * epsilon);
}

double smoothedMagnitudeDerivative(double d, double epsilon) {
  const double a = std::abs(d);
  const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  if (a >= epsilon) {
    return sign;
  }
  return sign * (4.0 * a / epsilon - 3.0 * a * a / (epsilon * epsilon));
}

double sparsityLoss(const Eigen::MatrixXd& personalized,
                    const Eigen::MatrixXd& original,
                    const SparsityOptions& options,
                    Eigen::MatrixXd* grad) {
  if (!(options.p > 0.0 && options.p < 1.0)) {
    throw InputError(detail::concat("sparsity exponent p must be in (0, 1), got ", options.p));
  }
  if (original.rows() != personalized.rows() || original.cols() != personalized.cols()) {
    throw InputError("sparsity loss: shape mismatch");
  }
  const Eigen::MatrixXd diff = personalized - original;
  const double eps = options.epsilon;
  double sum = 0.0;
  for (Eigen::Index k = 0; k < diff.size(); ++k) {
    const double s = smoothedMagnitude(diff.data()[k], eps);
    if (s > 0.0) {
      sum += std::pow(s, options.p);
    }
  }
  const double value = options.powerVariant ? sum : std::pow(sum, 1.0 / options.p);
  if (grad != nullptr) {
    grad->setZero(diff.rows(), diff.cols());
    if (sum > 0.0) {
      const double outer = options.powerVariant ? options.p : std::pow(sum, 1.0 / options.p - 1.0);
      for (Eigen::Index k = 0; k < diff.size(); ++k) {
        const double d = diff.data()[k];
        const double s = smoothedMagnitude(d, eps);
        if (s > 0.0) {
          const double inner = std::pow(s, options.p - 1.0);
          grad->data()[k] = outer * inner * smoothedMagnitudeDerivative(d, eps);
        }
      }
    }
  }
  return value;
}

double expressionReg(const Eigen::VectorXd& beta, Eigen::VectorXd* grad) {
  if (grad != nullptr) {
    *grad = beta.unaryExpr([](double b) { return b > 0.0 ? 1.0 : (b < 0.0 ? -1.0 : 0.0); });
  }
  return beta.cwiseAbs().sum();
}

double neutralReg(const Positions& personalized, const Positions& original, Positions* grad) {
  if (personalized.rows() != original.rows()) {
    throw InputError("neutral regularizer: shape mismatch");
  }
  const Positions diff = personalized - original;
  if (grad != nullptr) {
    *grad = 2.0 * diff;
  }
  return diff.squaredNorm();
}

}  // namespace blendrig
