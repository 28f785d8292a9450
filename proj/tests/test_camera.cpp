#include "blendrig/camera.h"
#include "blendrig/error.h"
#include "blendrig/synth.h"

#include "fixtures.h"
#include "gradcheck.h"

#include <doctest.h>

#include <Eigen/Geometry>

#include <fstream>
#include <random>

using namespace blendrig;

namespace {

Camera testCamera() {
  Camera c;
  c.fx = 210.0;
  c.fy = 190.0;
  c.cx = 63.5;
  c.cy = 66.0;
  c.rotation = Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  c.translation = Eigen::Vector3d(0.01, -0.02, 0.5);
  c.width = 128;
  c.height = 128;
  return c;
}

}  // namespace

TEST_CASE("projection") {
  const Camera c = testCamera();
  // Optical axis in world coordinates.
  const Eigen::Vector3d onAxis = c.rotation.transpose() * (Eigen::Vector3d(0, 0, 0.4) - c.translation);
  const Projection p = project(c, onAxis);
  CHECK(p.valid);
  CHECK((p.pixel - Eigen::Vector2d(c.cx, c.cy)).norm() <= 1e-10);
  CHECK(p.depth == doctest::Approx(0.4));
  // Doubling depth halves the offset from the principal point.
  const Eigen::Vector3d cam(0.05, -0.03, 0.3);
  const Projection near = project(c, c.rotation.transpose() * (cam - c.translation));
  const Projection far = project(c, c.rotation.transpose() * (2.0 * Eigen::Vector3d(cam.x(), cam.y(), cam.z()) - c.translation));
  // Scaling x, y and z together keeps the pixel; scale only z for the depth test.
  CHECK((near.pixel - far.pixel).norm() <= 1e-10);
  const Projection deeper = project(c, c.rotation.transpose() * (Eigen::Vector3d(cam.x(), cam.y(), 2 * cam.z()) - c.translation));
  CHECK((deeper.pixel - Eigen::Vector2d(c.cx, c.cy)).isApprox(0.5 * (near.pixel - Eigen::Vector2d(c.cx, c.cy)), 1e-12));
  // Matrix-composition oracle: K [R | t] in homogeneous coordinates.
  Eigen::Matrix3d k;
  k << c.fx, 0, c.cx, 0, c.fy, c.cy, 0, 0, 1;
  Eigen::Matrix<double, 3, 4> rt;
  rt << c.rotation, c.translation;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector3d x(u(rng), u(rng), u(rng));
    const Eigen::Vector3d h = k * rt * x.homogeneous();
    const Projection q = project(c, x);
    CHECK((q.pixel - h.hnormalized()).norm() <= 1e-10);
    CHECK(q.depth == doctest::Approx(h.z()).epsilon(1e-12));
  }
  // Behind the camera.
  const Projection behind = project(c, c.rotation.transpose() * (Eigen::Vector3d(0, 0, -0.1) - c.translation));
  CHECK_FALSE(behind.valid);
}

TEST_CASE("projection jacobian matches finite differences") {
  const Camera c = testCamera();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (int i = 0; i < 10; ++i) {
    const Eigen::Vector3d x(u(rng), u(rng), u(rng));
    const Eigen::Matrix3d j = projectJacobian(c, x);
    for (int row = 0; row < 3; ++row) {
      auto f = [&](const Eigen::VectorXd& p) {
        const Projection q = project(c, p);
        return row < 2 ? q.pixel(row) : q.depth;
      };
      CHECK(testing::checkGradient(f, x, j.row(row).transpose()).maxRelativeError <= 1e-5);
    }
  }
}

TEST_CASE("landmark embedding") {
  const BlendshapeRig head = testing::smallHead();
  const Positions& v = head.neutral.vertices;
  const Faces& f = head.neutral.faces;
  std::vector<LandmarkAnchor> anchors(3);
  anchors[0] = {7, Eigen::Vector3d(1, 0, 0)};
  anchors[1] = {12, Eigen::Vector3d::Constant(1.0 / 3.0)};
  anchors[2] = {20, Eigen::Vector3d(0.2, 0.5, 0.3)};
  const Positions e = embedLandmarks(v, f, anchors);
  CHECK(e.row(0) == v.row(f(7, 0)));
  CHECK((e.row(1) - (v.row(f(12, 0)) + v.row(f(12, 1)) + v.row(f(12, 2))) / 3.0).norm() <= 1e-15);
  CHECK((e.row(2) - (0.2 * v.row(f(20, 0)) + 0.5 * v.row(f(20, 1)) + 0.3 * v.row(f(20, 2)))).norm() <= 1e-15);
  std::vector<LandmarkAnchor> bad = {{static_cast<int>(f.rows()), Eigen::Vector3d(1, 0, 0)}};
  CHECK_THROWS_AS(embedLandmarks(v, f, bad), InputError);
  // Backward is the transpose of the linear embedding.
  const Positions c = Positions(testing::randomVector(9, 3).reshaped<Eigen::RowMajor>(3, 3));
  Positions grad = Positions::Zero(v.rows(), 3);
  embedLandmarksBackward(f, anchors, c, grad);
  const Positions dv = Positions(testing::randomVector(3 * v.rows(), 4).reshaped<Eigen::RowMajor>(v.rows(), 3));
  const double lhs = (embedLandmarks(dv, f, anchors).array() * c.array()).sum();
  const double rhs = (dv.array() * grad.array()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
}

TEST_CASE("landmark loss") {
  LandmarkObservation obs;
  obs.points.resize(2, 2);
  obs.points << 10, 10, 20, 20;
  obs.weights = Eigen::Vector2d::Ones();
  const std::vector<bool> both = {true, true};
  CHECK(landmarkLoss(obs.points, both, obs) == 0.0);
  Eigen::MatrixX2d proj = obs.points;
  proj.row(0) += Eigen::RowVector2d(1, 0);
  proj.row(1) += Eigen::RowVector2d(0, 2);
  CHECK(landmarkLoss(proj, both, obs) == doctest::Approx(1.5).epsilon(1e-15));
  LandmarkObservation one;
  one.points = obs.points.topRows(1);
  one.weights = Eigen::VectorXd::Ones(1);
  Eigen::MatrixX2d single = one.points;
  single.row(0) += Eigen::RowVector2d(3, 4);
  CHECK(landmarkLoss(single, {true}, one) == doctest::Approx(7.0));
  // Invisible landmarks drop out of the sum and the count.
  CHECK(landmarkLoss(proj, {true, false}, obs) == doctest::Approx(1.0));
  CHECK_THROWS_AS(landmarkLoss(proj, {false, false}, obs), InputError);
  CHECK_THROWS_AS(landmarkLoss(proj.topRows(1), both, obs), InputError);
  // Permutation invariance.
  LandmarkObservation swapped = obs;
  swapped.points.row(0) = obs.points.row(1);
  swapped.points.row(1) = obs.points.row(0);
  Eigen::MatrixX2d projSwapped = proj;
  projSwapped.row(0) = proj.row(1);
  projSwapped.row(1) = proj.row(0);
  CHECK(landmarkLoss(projSwapped, both, swapped) == landmarkLoss(proj, both, obs));
}

TEST_CASE("landmark loss gradient through the projection") {
  const Camera c = testCamera();
  const int n = 6;
  const Eigen::VectorXd world = testing::randomVector(3 * n, 5, 0.05);
  LandmarkObservation obs;
  obs.points = Eigen::MatrixX2d(n, 2);
  for (int i = 0; i < n; ++i) {
    obs.points.row(i) = project(c, world.segment<3>(3 * i)).pixel.transpose() + Eigen::RowVector2d(2.0 + i, -3.0 + 0.5 * i);
  }
  obs.weights = testing::randomVector(n, 6).cwiseAbs().cwiseMin(1.0);
  const std::vector<bool> vis(n, true);
  auto f = [&](const Eigen::VectorXd& x) {
    Eigen::MatrixX2d p(n, 2);
    for (int i = 0; i < n; ++i) {
      p.row(i) = project(c, x.segment<3>(3 * i)).pixel.transpose();
    }
    return landmarkLoss(p, vis, obs);
  };
  Eigen::MatrixX2d p(n, 2);
  for (int i = 0; i < n; ++i) {
    p.row(i) = project(c, world.segment<3>(3 * i)).pixel.transpose();
  }
  Eigen::MatrixX2d gp;
  landmarkLoss(p, vis, obs, &gp);
  Eigen::VectorXd g(3 * n);
  for (int i = 0; i < n; ++i) {
    g.segment<3>(3 * i) = projectJacobian(c, world.segment<3>(3 * i)).topRows<2>().transpose() * gp.row(i).transpose();
  }
  CHECK(testing::checkGradient(f, world, g).maxRelativeError <= 1e-5);
}

TEST_CASE("camera and landmark files round trip") {
  const auto dir = testing::scratchDir("camera_io");
  Camera c = testCamera();
  saveCamera(c, dir / "camera.txt");
  const Camera back = loadCamera(dir / "camera.txt");
  CHECK(back.fx == c.fx);
  CHECK(back.cy == c.cy);
  CHECK((back.rotation - c.rotation).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(back.translation == c.translation);
  CHECK(back.width == 128);

  LandmarkObservation obs;
  obs.points.resize(3, 2);
  obs.points << 1.25, 2.5, 100.0, 3.0, -4.0, 7.5;
  obs.weights = Eigen::Vector3d(1.0, 0.5, 0.0);
  saveLandmarks(obs, dir / "lm.txt");
  const LandmarkObservation lb = loadLandmarks(dir / "lm.txt", 3);
  CHECK(lb.points == obs.points);
  CHECK(lb.weights == obs.weights);
  // Ids the detector did not report count as invisible; unknown ids are errors.
  const LandmarkObservation more = loadLandmarks(dir / "lm.txt", 4);
  CHECK(more.weights(3) == 0.0);
  CHECK_THROWS_AS(loadLandmarks(dir / "lm.txt", 2), InputError);

  std::ofstream(dir / "bad.txt") << "1 2 3\n";
  CHECK_THROWS_AS(loadCamera(dir / "bad.txt"), InputError);
  Camera nonOrtho = c;
  nonOrtho.rotation(0, 0) += 0.1;
  CHECK_THROWS_AS(nonOrtho.validate(), InputError);
  Camera negative = c;
  negative.fx = -1.0;
  CHECK_THROWS_AS(negative.validate(), InputError);
}

TEST_CASE("fixture cameras look at the head") {
  for (int k = 0; k < 4; ++k) {
    const Camera c = makeFixtureCamera(k, 4, 128);
    CHECK_NOTHROW(c.validate());
    const Projection p = project(c, Eigen::Vector3d::Zero());
    CHECK((p.pixel - Eigen::Vector2d(64, 64)).norm() <= 1e-9);
    CHECK(c.center().norm() == doctest::Approx(0.5));
  }
}
