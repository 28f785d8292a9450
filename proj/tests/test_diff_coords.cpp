#include "blendrig/diff_coords.h"
#include "blendrig/error.h"
#include "blendrig/mesh.h"

#include "fixtures.h"
#include "gradcheck.h"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

using namespace blendrig;

namespace {

// Random closed mesh: a perturbed octahedron subdivided once by face splitting.
TriMesh randomMesh(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  TriMesh m;
  m.vertices.resize(6, 3);
  m.vertices << 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1;
  m.faces.resize(8, 3);
  m.faces << 0, 2, 4, 2, 1, 4, 1, 3, 4, 3, 0, 4, 2, 0, 5, 1, 2, 5, 3, 1, 5, 0, 3, 5;
  Positions v(6 + 8, 3);
  v.topRows(6) = m.vertices;
  Faces f(24, 3);
  for (int k = 0; k < 8; ++k) {
    const Eigen::RowVector3i t = m.faces.row(k);
    v.row(6 + k) = (m.vertices.row(t(0)) + m.vertices.row(t(1)) + m.vertices.row(t(2))) / 3.0;
    f.row(3 * k) << t(0), t(1), 6 + k;
    f.row(3 * k + 1) << t(1), t(2), 6 + k;
    f.row(3 * k + 2) << t(2), t(0), 6 + k;
  }
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    v.row(i) += Eigen::RowVector3d(u(rng), u(rng), u(rng));
  }
  return {v, f};
}

Positions randomPositions(Eigen::Index n, std::uint64_t seed) {
  const Eigen::VectorXd r = testing::randomVector(3 * n, seed);
  return Eigen::Map<const Positions>(r.data(), n, 3);
}

double infRatio(const Positions& a, const Positions& b) { return (a - b).cwiseAbs().maxCoeff() / b.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("round trip through differential coordinates") {
  const BlendshapeRig head = testing::smallHead();
  const BlendshapeRig full = makeHeadTemplate();
  for (double lambda : {0.0, 1.0, 19.0, 100.0}) {
    CAPTURE(lambda);
    {
      const AugmentedTopology topo = buildAugmentedTopology(full.neutral, full.fill);
      const DiffCoordSystem sys(buildCombinatorialLaplacian(topo), lambda);
      const Positions x = combinedPositions(full.neutral.vertices, full.fill.interior);
      CHECK(infRatio(sys.fromDifferential(sys.toDifferential(x)), x) <= 1e-8);
    }
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const TriMesh m = randomMesh(seed);
      const DiffCoordSystem sys(buildCombinatorialLaplacian(buildSurfaceTopology(m)), lambda);
      const Positions x = randomPositions(m.vertexCount(), seed + 10);
      CHECK(infRatio(sys.fromDifferential(sys.toDifferential(x)), x) <= 1e-8);
    }
  }
}

TEST_CASE("forward operator matches a dense matrix-vector product") {
  const TriMesh m = randomMesh(4);
  const SparseOperator lap = buildCombinatorialLaplacian(buildSurfaceTopology(m));
  const DiffCoordSystem sys(lap, 19.0);
  const Positions x = randomPositions(m.vertexCount(), 5);
  const Eigen::MatrixXd dense = Eigen::MatrixXd::Identity(m.vertexCount(), m.vertexCount()) + 19.0 * Eigen::MatrixXd(lap);
  const Eigen::MatrixXd expect = dense * Eigen::MatrixXd(x);
  CHECK((Eigen::MatrixXd(sys.toDifferential(x)) - expect).cwiseAbs().maxCoeff() <= 1e-12);
  // lambda = 0 is the identity map.
  const DiffCoordSystem id(lap, 0.0);
  CHECK(id.fromDifferential(x) == x);
}

TEST_CASE("adjoint solve equals the forward solve") {
  const BlendshapeRig head = testing::smallHead();
  const DiffCoordSystem sys(buildCombinatorialLaplacian(buildAugmentedTopology(head.neutral, head.fill)), 19.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Positions g = randomPositions(sys.dimension(), seed);
    const Positions a = sys.adjointFromDifferential(g);
    const Positions f = sys.fromDifferential(g);
    CHECK((a - f).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, f.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("gradient of a probe loss through from_differential") {
  const TriMesh m = randomMesh(6);
  const DiffCoordSystem sys(buildCombinatorialLaplacian(buildSurfaceTopology(m)), 19.0);
  const Eigen::Index n = m.vertexCount();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Positions w = randomPositions(n, 100 + seed);
    // Linear probe <w, x(u)> and a quadratic probe 0.5 |x(u)|^2.
    auto linear = [&](const Eigen::VectorXd& u) {
      const Positions x = sys.fromDifferential(Eigen::Map<const Positions>(u.data(), n, 3));
      return (x.array() * w.array()).sum();
    };
    auto quadratic = [&](const Eigen::VectorXd& u) {
      return 0.5 * sys.fromDifferential(Eigen::Map<const Positions>(u.data(), n, 3)).squaredNorm();
    };
    const Eigen::VectorXd u = testing::randomVector(3 * n, 200 + seed);
    const Positions um = Eigen::Map<const Positions>(u.data(), n, 3);
    Positions gl = sys.adjointFromDifferential(w);
    Positions gq = sys.adjointFromDifferential(sys.fromDifferential(um));
    const auto rl = testing::checkGradient(linear, u, Eigen::Map<const Eigen::VectorXd>(gl.data(), gl.size()));
    const auto rq = testing::checkGradient(quadratic, u, Eigen::Map<const Eigen::VectorXd>(gq.data(), gq.size()));
    CHECK(rl.maxRelativeError <= 1e-6);
    CHECK(rq.maxRelativeError <= 1e-6);
  }
}

TEST_CASE("K4: u = M x recovers x") {
  TriMesh k4;
  k4.vertices.resize(4, 3);
  k4.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1;
  k4.faces.resize(4, 3);
  k4.faces << 0, 2, 1, 0, 1, 3, 0, 3, 2, 1, 2, 3;
  const SparseOperator lap = buildCombinatorialLaplacian(buildSurfaceTopology(k4));
  const DiffCoordSystem sys(lap, 19.0);
  // Dense oracle: L(K4) = 4 I - J.
  const Eigen::Matrix4d m = Eigen::Matrix4d::Identity() + 19.0 * (4.0 * Eigen::Matrix4d::Identity() - Eigen::Matrix4d::Ones());
  const Positions x = randomPositions(4, 3);
  const Positions u = m * Eigen::MatrixXd(x);
  CHECK((sys.fromDifferential(u) - x).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("cotangent at one vertex spreads to its 1-ring") {
  const BlendshapeRig head = testing::smallHead();
  const AugmentedTopology topo = buildSurfaceTopology(head.neutral);
  const SparseOperator lap = buildCombinatorialLaplacian(topo);
  const int v = head.vertexCount() / 2;
  Positions g = Positions::Zero(head.vertexCount(), 3);
  g(v, 0) = 1.0;
  const Positions spread = DiffCoordSystem(lap, 19.0).adjointFromDifferential(g);
  for (const auto& [i, j] : topo.edges) {
    if (i == v || j == v) {
      CHECK(spread(i == v ? j : i, 0) > 0.0);
    }
  }
  CHECK(DiffCoordSystem(lap, 0.0).adjointFromDifferential(g) == g);
}

TEST_CASE("smooth bump in u-space gives a smooth surface change") {
  // Unit icosphere, four subdivisions: near-uniform edge lengths.
  const double g = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::RowVector3d> verts = {{-1, g, 0}, {1, g, 0}, {-1, -g, 0}, {1, -g, 0}, {0, -1, g}, {0, 1, g},
                                           {0, -1, -g}, {0, 1, -g}, {g, 0, -1}, {g, 0, 1}, {-g, 0, -1}, {-g, 0, 1}};
  std::vector<Eigen::Vector3i> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                        {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                        {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                        {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (auto& v : verts) {
    v.normalize();
  }
  for (int level = 0; level < 4; ++level) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      const auto it = mid.find(key);
      if (it != mid.end()) {
        return it->second;
      }
      verts.push_back((verts[a] + verts[b]).normalized());
      const int id = static_cast<int>(verts.size()) - 1;
      mid.emplace(key, id);
      return id;
    };
    std::vector<Eigen::Vector3i> next;
    for (const auto& f : faces) {
      const int ab = midpoint(f(0), f(1));
      const int bc = midpoint(f(1), f(2));
      const int ca = midpoint(f(2), f(0));
      next.emplace_back(f(0), ab, ca);
      next.emplace_back(f(1), bc, ab);
      next.emplace_back(f(2), ca, bc);
      next.emplace_back(ab, bc, ca);
    }
    faces = std::move(next);
  }
  TriMesh sphere;
  sphere.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) {
    sphere.vertices.row(static_cast<Eigen::Index>(i)) = verts[i];
  }
  sphere.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (size_t f = 0; f < faces.size(); ++f) {
    sphere.faces.row(static_cast<Eigen::Index>(f)) = faces[f].transpose();
  }
  const Positions& v = sphere.vertices;
  const AugmentedTopology topo = buildSurfaceTopology(sphere);
  const DiffCoordSystem sys(buildCombinatorialLaplacian(topo), 19.0);
  // Gaussian bump along the normal, centered at +z.
  const double sigma = 0.3;
  const Eigen::RowVector3d c(0, 0, 1);
  Positions u(v.rows(), 3);
  std::vector<double> dist(static_cast<size_t>(v.rows()));
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    dist[static_cast<size_t>(i)] = (v.row(i) - c).norm();
    const double d = dist[static_cast<size_t>(i)];
    u.row(i) = 0.05 * std::exp(-d * d / (2 * sigma * sigma)) * v.row(i);
  }
  const Positions x = sys.fromDifferential(u);
  double largest = 0.0;
  std::vector<double> inside;
  for (const auto& [i, j] : topo.edges) {
    const double before = (v.row(i) - v.row(j)).norm();
    const double after = (v.row(i) + x.row(i) - v.row(j) - x.row(j)).norm();
    const double change = std::abs(after - before);
    largest = std::max(largest, change);
    if (dist[static_cast<size_t>(i)] <= sigma && dist[static_cast<size_t>(j)] <= sigma) {
      inside.push_back(change);
    }
  }
  REQUIRE(inside.size() > 20);
  std::nth_element(inside.begin(), inside.begin() + inside.size() / 2, inside.end());
  const double median = inside[inside.size() / 2];
  CHECK(median > 0.0);
  CHECK(largest <= 3.0 * median);
}

TEST_CASE("invalid systems are rejected") {
  const TriMesh m = randomMesh(1);
  const SparseOperator lap = buildCombinatorialLaplacian(buildSurfaceTopology(m));
  CHECK_THROWS_AS(DiffCoordSystem(lap, -1.0), InputError);
  const DiffCoordSystem sys(lap, 1.0);
  CHECK_THROWS_AS(sys.fromDifferential(Positions::Zero(3, 3)), InputError);
}
