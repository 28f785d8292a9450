#include "blendrig/error.h"
#include "blendrig/rig.h"
#include "blendrig/synth.h"

#include "fixtures.h"
#include "gradcheck.h"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace blendrig;

namespace {

// Twelve vertices, mirror-symmetric about x = 0 (four on the midline), two bases.
BlendshapeRig toyRig() {
  BlendshapeRig r;
  r.neutral.vertices.resize(12, 3);
  r.neutral.vertices << 0.1, 0, 0, -0.1, 0, 0, 0.2, 0.1, 0, -0.2, 0.1, 0, 0.1, 0.2, 0.05, -0.1, 0.2, 0.05,
      0.3, -0.1, 0, -0.3, -0.1, 0, 0, 0.3, 0, 0, -0.2, 0, 0, 0.1, 0.1, 0, -0.1, 0.1;
  r.neutral.faces.resize(4, 3);
  r.neutral.faces << 0, 2, 4, 1, 5, 3, 8, 10, 9, 6, 11, 7;
  r.basis = testing::randomVector(36 * 2, 4, 0.01).reshaped(36, 2);
  r.names = {"a", "b"};
  r.symmetry = {{0, 0}};
  r.mirrorMap = computeMirrorMap(r.neutral.vertices);
  return r;
}

Eigen::RowVector3d disp(const Eigen::MatrixXd& basis, int column, int vertex) {
  return basis.block(3 * vertex, column, 3, 1).transpose();
}

}  // namespace

TEST_CASE("evaluate_expression matches the dense oracle and is linear") {
  const BlendshapeRig r = toyRig();
  CHECK(evaluateExpression(r, Eigen::VectorXd::Zero(2)) == r.neutral.vertices);
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(2);
  e1(1) = 1.0;
  CHECK((evaluateExpression(r, e1) - r.blendshapePositions(1)).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::VectorXd b1 = testing::randomVector(2, 1);
  const Eigen::VectorXd b2 = testing::randomVector(2, 2);
  const Positions y = evaluateExpression(r, b1);
  for (int i = 0; i < 12; ++i) {
    for (int c = 0; c < 3; ++c) {
      double expect = r.neutral.vertices(i, c);
      for (int j = 0; j < 2; ++j) {
        expect += r.basis(3 * i + c, j) * b1(j);
      }
      CHECK(std::abs(y(i, c) - expect) <= 1e-12);
    }
  }
  const Positions lhs = evaluateExpression(r, b1 + b2) - r.neutral.vertices;
  const Positions rhs = (evaluateExpression(r, b1) - r.neutral.vertices) + (evaluateExpression(r, b2) - r.neutral.vertices);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK_THROWS_AS(evaluateExpression(r, Eigen::VectorXd::Zero(3)), InputError);
}

TEST_CASE("mirror map is an involution fixing the midline") {
  const BlendshapeRig r = toyRig();
  CHECK_NOTHROW(validateMirrorMap(r.mirrorMap, 12));
  CHECK(r.mirrorMap[0] == 1);
  CHECK(r.mirrorMap[8] == 8);
  std::vector<int> bad = r.mirrorMap;
  bad[0] = 2;
  CHECK_THROWS_AS(validateMirrorMap(bad, 12), InputError);
  Positions skew = r.neutral.vertices;
  skew(0, 0) += 0.01;
  CHECK_THROWS_AS(computeMirrorMap(skew), InputError);
  const BlendshapeRig head = testing::smallHead();
  CHECK_NOTHROW(validateMirrorMap(head.mirrorMap, head.vertexCount()));
}

TEST_CASE("mirror update reflects the left half exactly") {
  const BlendshapeRig r = toyRig();
  const Eigen::MatrixXd m = mirrorUpdate(r.basis, r.symmetry, r.mirrorMap, r.neutral.vertices);
  for (int v = 0; v < 12; ++v) {
    const Eigen::RowVector3d d = disp(m, 0, v);
    const Eigen::RowVector3d reflected(-d.x(), d.y(), d.z());
    CHECK((disp(m, 0, r.mirrorMap[v]) - reflected).norm() == 0.0);
    if (r.neutral.vertices(v, 0) > 0.0) {
      CHECK(disp(m, 0, v) == disp(r.basis, 0, v));
    }
    if (r.neutral.vertices(v, 0) == 0.0) {
      CHECK(d.x() == 0.0);
    }
  }
  // Non-symmetric column untouched, and the update is idempotent.
  CHECK(m.col(1) == r.basis.col(1));
  CHECK(mirrorUpdate(m, r.symmetry, r.mirrorMap, r.neutral.vertices) == m);
}

TEST_CASE("mirror update of a (left, right) pair rewrites the right column") {
  BlendshapeRig r = toyRig();
  r.symmetry = {{0, 1}};
  const Eigen::MatrixXd m = mirrorUpdate(r.basis, r.symmetry, r.mirrorMap, r.neutral.vertices);
  CHECK(m.col(0) == r.basis.col(0));
  for (int v = 0; v < 12; ++v) {
    const Eigen::RowVector3d d = disp(m, 0, v);
    CHECK(disp(m, 1, r.mirrorMap[v]) == Eigen::RowVector3d(-d.x(), d.y(), d.z()));
  }
}

TEST_CASE("mirror update adjoint is the transpose") {
  BlendshapeRig r = toyRig();
  for (const auto& sym : {std::vector<SymmetryPair>{{0, 0}}, std::vector<SymmetryPair>{{0, 1}}}) {
    const Eigen::MatrixXd x = testing::randomVector(72, 8).reshaped(36, 2);
    const Eigen::MatrixXd y = testing::randomVector(72, 9).reshaped(36, 2);
    const double lhs = (mirrorUpdate(x, sym, r.mirrorMap, r.neutral.vertices).array() * y.array()).sum();
    const double rhs = (x.array() * mirrorUpdateAdjoint(y, sym, r.mirrorMap, r.neutral.vertices).array()).sum();
    CHECK(std::abs(lhs - rhs) <= 1e-12);
  }
}

TEST_CASE("template head mirror pairs are exact reflections") {
  const BlendshapeRig head = makeHeadTemplate();
  for (const SymmetryPair& s : head.symmetry) {
    const Eigen::MatrixXd m = mirrorUpdate(head.basis, head.symmetry, head.mirrorMap, head.neutral.vertices);
    double worst = 0.0;
    for (int v = 0; v < head.vertexCount(); ++v) {
      const Eigen::RowVector3d d = disp(m, s.left, v);
      worst = std::max(worst, (disp(m, s.right, head.mirrorMap[v]) - Eigen::RowVector3d(-d.x(), d.y(), d.z())).norm());
    }
    CHECK(worst == 0.0);
  }
}

TEST_CASE("locality weights") {
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(6, 1);
  b.block(3, 0, 3, 1) << 0.3, 0.4, 0.0;  // norm 0.5
  const Eigen::MatrixXd w = localityWeights(b, 0.5);
  CHECK(w.block(0, 0, 3, 1) == Eigen::Vector3d::Ones());
  for (int k = 3; k < 6; ++k) {
    CHECK(w(k, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  }
  CHECK(std::exp(-1.0) == doctest::Approx(0.367879).epsilon(1e-6));
  Eigen::MatrixXd bigger = b * 2.0;
  CHECK(localityWeights(bigger, 0.5)(3, 0) < w(3, 0));
  CHECK_THROWS_AS(localityWeights(b, 0.0), InputError);
  CHECK_THROWS_AS(localityWeights(b, -1.0), InputError);
  // Per-column scale defaults to the median nonzero vertex norm.
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(12, 2);
  c.block(0, 0, 3, 1) << 1, 0, 0;
  c.block(3, 0, 3, 1) << 0, 2, 0;
  c.block(6, 0, 3, 1) << 0, 0, 5;
  const Eigen::VectorXd a = defaultLocalityScales(c);
  CHECK(a(0) == 2.0);
  CHECK(a(1) == 1.0);
}

TEST_CASE("locality loss") {
  Eigen::MatrixXd w(2, 2);
  w << 1, 0.5, 0.5, 1;
  Eigen::MatrixXd d(2, 2);
  d << 1, 2, 2, 1;
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 2);
  CHECK(localityLoss(w, d, zero) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(localityLoss(w, d, d) == 0.0);
  Eigen::MatrixXd single = zero;
  single(1, 0) = -0.7;
  CHECK(localityLoss(Eigen::MatrixXd::Ones(2, 2), single, zero) == doctest::Approx(0.7));
  CHECK_THROWS_AS(localityLoss(w, Eigen::MatrixXd::Zero(3, 2), Eigen::MatrixXd::Zero(3, 2)), InputError);
  // Gradient is masked by W: zero where W is zero.
  Eigen::MatrixXd wz = w;
  wz(0, 1) = 0.0;
  Eigen::MatrixXd g;
  localityLoss(wz, d, zero, &g);
  CHECK(g(0, 1) == 0.0);
  const Eigen::VectorXd x = d.reshaped();
  auto f = [&](const Eigen::VectorXd& v) { return localityLoss(wz, v.reshaped(2, 2), zero); };
  CHECK(testing::checkGradient(f, x, g.reshaped()).maxRelativeError <= 1e-5);
}

TEST_CASE("sparsity loss") {
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 2);
  CHECK(sparsityLoss(zero, zero) == 0.0);
  Eigen::MatrixXd one = zero;
  one(0, 1) = -0.3;
  CHECK(sparsityLoss(one, zero) == doctest::Approx(0.3).epsilon(1e-14));
  Eigen::MatrixXd two = zero;
  two(0, 0) = 1.0;
  two(1, 1) = -1.0;
  CHECK(std::abs(sparsityLoss(two, zero) - std::pow(2.0, 4.0 / 3.0)) <= 1e-9);
  CHECK(std::pow(2.0, 4.0 / 3.0) == doctest::Approx(2.519842).epsilon(1e-6));
  SparsityOptions pv;
  pv.powerVariant = true;
  CHECK(sparsityLoss(two, zero, pv) == doctest::Approx(2.0));
  SparsityOptions badP;
  badP.p = 1.0;
  CHECK_THROWS_AS(sparsityLoss(two, zero, badP), InputError);
  badP.p = 0.0;
  CHECK_THROWS_AS(sparsityLoss(two, zero, badP), InputError);
}

TEST_CASE("sparsity loss concentrates: merged entries cost no more than split ones") {
  // Brute force over enumerated 2-entry instances.
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 2);
  for (double a : {0.1, 0.5, 1.0, 2.0}) {
    for (double b : {0.2, 0.7, 1.5}) {
      Eigen::MatrixXd split(1, 2);
      split << a, b;
      Eigen::MatrixXd merged(1, 2);
      merged << a + b, 0.0;
      const double brute = std::pow(std::pow(a, 0.75) + std::pow(b, 0.75), 1.0 / 0.75);
      CHECK(sparsityLoss(split, zero) == doctest::Approx(brute).epsilon(1e-12));
      CHECK(sparsityLoss(merged, zero) <= sparsityLoss(split, zero));
    }
  }
}

TEST_CASE("smoothed magnitude is exact away from zero and finite at zero") {
  const double eps = 1e-8;
  CHECK(smoothedMagnitude(0.0, eps) == 0.0);
  CHECK(smoothedMagnitude(-3e-8, eps) == 3e-8);
  CHECK(smoothedMagnitude(eps, eps) == eps);
  CHECK(std::isfinite(smoothedMagnitudeDerivative(0.0, eps)));
  CHECK(std::abs(smoothedMagnitude(eps * (1 - 1e-9), eps) - eps) < 1e-15);
  for (double d : {1e-10, 5e-9, -7e-9}) {
    const double h = 1e-13;
    const double fd = (smoothedMagnitude(d + h, eps) - smoothedMagnitude(d - h, eps)) / (2 * h);
    CHECK(smoothedMagnitudeDerivative(d, eps) == doctest::Approx(fd).epsilon(1e-4));
  }
  // The loss gradient stays finite with entries at and near zero.
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
  d(0, 0) = 1e-9;
  d(1, 0) = 0.5;
  Eigen::MatrixXd g;
  sparsityLoss(d, Eigen::MatrixXd::Zero(2, 2), {}, &g);
  CHECK(g.allFinite());
}

TEST_CASE("regularizer gradients match finite differences") {
  const Eigen::MatrixXd base = testing::randomVector(24, 3).reshaped(8, 3);
  // Differences at least 0.05 away from the non-smooth origin.
  Eigen::MatrixXd delta = testing::randomVector(24, 5, 0.2).reshaped(8, 3);
  delta = delta.array().sign() * (delta.array().abs() + 0.05);
  const Eigen::MatrixXd pers = base + delta;
  const Eigen::MatrixXd w = localityWeights(base, defaultLocalityScales(base));
  Eigen::MatrixXd g;
  localityLoss(w, pers, base, &g);
  auto loc = [&](const Eigen::VectorXd& v) { return localityLoss(w, v.reshaped(8, 3), base); };
  CHECK(testing::checkGradient(loc, pers.reshaped(), g.reshaped()).maxRelativeError <= 1e-5);
  for (bool power : {false, true}) {
    SparsityOptions o;
    o.powerVariant = power;
    sparsityLoss(pers, base, o, &g);
    auto sp = [&](const Eigen::VectorXd& v) { return sparsityLoss(v.reshaped(8, 3), base, o); };
    CHECK(testing::checkGradient(sp, pers.reshaped(), g.reshaped()).maxRelativeError <= 1e-5);
  }
  const Eigen::VectorXd beta = testing::randomVector(6, 4);
  Eigen::VectorXd gb;
  expressionReg(beta, &gb);
  auto er = [](const Eigen::VectorXd& v) { return expressionReg(v); };
  CHECK(testing::checkGradient(er, beta, gb).maxRelativeError <= 1e-5);
  const Positions pn = Positions(base.topRows(8));
  const Positions on = pn + Positions(testing::randomVector(24, 6).reshaped<Eigen::RowMajor>(8, 3));
  Positions gn;
  neutralReg(pn, on, &gn);
  auto nr = [&](const Eigen::VectorXd& v) {
    return neutralReg(Positions(v.reshaped<Eigen::RowMajor>(8, 3)), on);
  };
  const Eigen::VectorXd pnv = pn.reshaped<Eigen::RowMajor>();
  CHECK(testing::checkGradient(nr, pnv, gn.reshaped<Eigen::RowMajor>()).maxRelativeError <= 1e-5);
}

TEST_CASE("expression and neutral regularizers") {
  CHECK(expressionReg(Eigen::VectorXd::Zero(4)) == 0.0);
  Eigen::VectorXd b(2);
  b << 0.5, -0.5;
  CHECK(expressionReg(b) == 1.0);
  const Eigen::VectorXd r = testing::randomVector(20, 12);
  CHECK(expressionReg(r) == doctest::Approx(r.cwiseAbs().sum()).epsilon(1e-14));
  Eigen::VectorXd gz;
  expressionReg(Eigen::VectorXd::Zero(3), &gz);
  CHECK(gz == Eigen::VectorXd::Zero(3));

  const Positions p = Positions(testing::randomVector(30, 1).reshaped<Eigen::RowMajor>(10, 3));
  CHECK(neutralReg(p, p) == 0.0);
  Positions q = p;
  q(3, 1) += 0.25;
  CHECK(neutralReg(q, p) == doctest::Approx(0.0625).epsilon(1e-12));
  const Positions o = Positions(testing::randomVector(30, 2).reshaped<Eigen::RowMajor>(10, 3));
  double direct = 0.0;
  for (int i = 0; i < 10; ++i) {
    for (int c = 0; c < 3; ++c) {
      direct += (p(i, c) - o(i, c)) * (p(i, c) - o(i, c));
    }
  }
  CHECK(neutralReg(p, o) == doctest::Approx(direct).epsilon(1e-13));
  CHECK_THROWS_AS(neutralReg(p, Positions::Zero(9, 3)), InputError);
}

TEST_CASE("personalize with zero deformation returns the template") {
  const BlendshapeRig head = testing::smallHead();
  const AugmentedTopology topo = buildAugmentedTopology(head.neutral, head.fill);
  const DiffCoordSystem sys(buildCombinatorialLaplacian(topo), 19.0);
  const RigDeformation zero = RigDeformation::zeros(topo.vertexCount, head.basisCount());
  const BlendshapeRig p = personalize(head, zero, sys);
  CHECK((p.neutral.vertices - head.neutral.vertices).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((p.basis - head.basis).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("personalize mirrors a left-half deformation onto the right") {
  const BlendshapeRig head = testing::smallHead();
  const AugmentedTopology topo = buildAugmentedTopology(head.neutral, head.fill);
  const DiffCoordSystem sys(buildCombinatorialLaplacian(topo), 19.0);
  RigDeformation d = RigDeformation::zeros(topo.vertexCount, head.basisCount());
  const int selfSym = [&] {
    for (const auto& s : head.symmetry) {
      if (s.left == s.right) {
        return s.left;
      }
    }
    return -1;
  }();
  REQUIRE(selfSym >= 0);
  for (int v = 0; v < head.vertexCount(); ++v) {
    if (head.neutral.vertices(v, 0) > 0.01) {
      d.bases[static_cast<size_t>(selfSym)].row(v) << 0.002, -0.001, 0.003;
    }
  }
  const PersonalizedSurfaces p = personalizeSurfaces(head, d, sys);
  double worst = 0.0;
  for (int v = 0; v < head.vertexCount(); ++v) {
    const Eigen::RowVector3d a = disp(p.basis, selfSym, v);
    worst = std::max(worst, (disp(p.basis, selfSym, head.mirrorMap[v]) - Eigen::RowVector3d(-a.x(), a.y(), a.z())).norm());
  }
  CHECK(worst == 0.0);
  CHECK((p.basis.col(selfSym) - head.basis.col(selfSym)).norm() > 1e-4);
}

TEST_CASE("personalize backward is the exact adjoint") {
  const BlendshapeRig head = testing::smallHead();
  const AugmentedTopology topo = buildAugmentedTopology(head.neutral, head.fill);
  const DiffCoordSystem sys(buildCombinatorialLaplacian(topo), 19.0);
  const int n = topo.vertexCount;
  const int m = head.basisCount();
  // Linear probe: sum of <cN, neutral> + <cB, basis>.
  const Positions cN = Positions(testing::randomVector(3 * head.vertexCount(), 1).reshaped<Eigen::RowMajor>(head.vertexCount(), 3));
  const Eigen::MatrixXd cB = testing::randomVector(3 * head.vertexCount() * m, 2).reshaped(3 * head.vertexCount(), m);
  auto unpack = [&](const Eigen::VectorXd& x) {
    RigDeformation d = RigDeformation::zeros(n, m);
    d.neutral = x.head(3 * n).reshaped<Eigen::RowMajor>(n, 3);
    for (int j = 0; j < m; ++j) {
      d.bases[static_cast<size_t>(j)] = x.segment(3 * n * (j + 1), 3 * n).reshaped<Eigen::RowMajor>(n, 3);
    }
    return d;
  };
  auto f = [&](const Eigen::VectorXd& x) {
    const PersonalizedSurfaces p = personalizeSurfaces(head, unpack(x), sys);
    return (p.neutral.array() * cN.array()).sum() + (p.basis.array() * cB.array()).sum();
  };
  const RigDeformation g = personalizeBackward(head, sys, cN, cB);
  Eigen::VectorXd analytic(3 * n * (m + 1));
  analytic.head(3 * n) = g.neutral.reshaped<Eigen::RowMajor>();
  for (int j = 0; j < m; ++j) {
    analytic.segment(3 * n * (j + 1), 3 * n) = g.bases[static_cast<size_t>(j)].reshaped<Eigen::RowMajor>();
  }
  const Eigen::VectorXd x = testing::randomVector(analytic.size(), 3, 1e-3);
  testing::GradCheckOptions o;
  o.maxCoordinates = 80;
  CHECK(testing::checkGradient(f, x, analytic, o).maxRelativeError <= 1e-6);
}

TEST_CASE("rig manifest round trip") {
  BlendshapeRig head = testing::smallHead();
  const auto dir = testing::scratchDir("rig_io");
  saveRig(head, dir);
  const BlendshapeRig back = loadRig(dir / "manifest.json");
  CHECK(back.names == head.names);
  CHECK(back.mirrorMap == head.mirrorMap);
  CHECK((back.neutral.vertices - head.neutral.vertices).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((back.basis - head.basis).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(back.neutral.faces == head.neutral.faces);
  CHECK(back.fill.tets == head.fill.tets);
  REQUIRE(back.landmarks.size() == head.landmarks.size());
  CHECK(back.landmarks[5].face == head.landmarks[5].face);
  CHECK(back.basisInterior.size() == static_cast<size_t>(head.basisCount()));
  REQUIRE(back.symmetry.size() == head.symmetry.size());
  CHECK(back.symmetry[1].right == head.symmetry[1].right);
}

TEST_CASE("rig validation rejects broken manifests") {
  BlendshapeRig head = testing::smallHead();
  BlendshapeRig dup = head;
  dup.names[1] = dup.names[0];
  CHECK_THROWS_AS(dup.validate(), InputError);
  BlendshapeRig badBary = head;
  badBary.landmarks[0].barycentric << 0.5, 0.6, -0.1;
  CHECK_THROWS_AS(badBary.validate(), InputError);
  BlendshapeRig badCols = head;
  badCols.names.pop_back();
  CHECK_THROWS_AS(badCols.validate(), InputError);
}
