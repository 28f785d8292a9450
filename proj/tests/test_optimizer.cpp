#include "blendrig/error.h"
#include "blendrig/optimizer.h"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

using namespace blendrig;

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  for (auto kind : {OptimizerKind::Adam, OptimizerKind::AdamUniform}) {
    OptimizerState s = OptimizerState::create(kind, 3, {});
    Eigen::VectorXd p(3);
    p << 1, -2, 3;
    const Eigen::VectorXd before = p;
    optimizerStep(s, p, Eigen::VectorXd::Zero(3));
    CHECK(p == before);
    CHECK(s.step == 1);
  }
}

TEST_CASE("adam: first step from g = 1 moves by the learning rate") {
  OptimizerState s = OptimizerState::create(OptimizerKind::Adam, 1, {});
  Eigen::VectorXd p = Eigen::VectorXd::Zero(1);
  adamStep(s, p, Eigen::VectorXd::Ones(1));
  // m_hat = 1, v_hat = 1, update = -lr / (1 + eps).
  CHECK(p(0) == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adam: hand-evaluated recurrence over several steps") {
  const AdamHyperparameters h;
  OptimizerState s = OptimizerState::create(OptimizerKind::Adam, 1, h);
  Eigen::VectorXd p = Eigen::VectorXd::Constant(1, 0.5);
  double m = 0.0;
  double v = 0.0;
  double x = 0.5;
  const double grads[] = {0.3, -1.2, 2.0, 0.01, -0.7};
  for (int t = 1; t <= 5; ++t) {
    const double g = grads[t - 1];
    adamStep(s, p, Eigen::VectorXd::Constant(1, g));
    m = h.beta1 * m + (1 - h.beta1) * g;
    v = h.beta2 * v + (1 - h.beta2) * g * g;
    x -= h.learningRate * (m / (1 - std::pow(h.beta1, t))) / (std::sqrt(v / (1 - std::pow(h.beta2, t))) + h.epsilon);
    CHECK(p(0) == doctest::Approx(x).epsilon(1e-14));
  }
}

TEST_CASE("adam: identical coordinates get identical updates") {
  OptimizerState s = OptimizerState::create(OptimizerKind::Adam, 2, {});
  Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
  for (int t = 0; t < 4; ++t) {
    adamStep(s, p, Eigen::VectorXd::Constant(2, 0.4 * (t + 1)));
    CHECK(p(0) == p(1));
  }
}

TEST_CASE("adam uniform: one shared denominator") {
  OptimizerState s = OptimizerState::create(OptimizerKind::AdamUniform, 2, {});
  CHECK(s.secondMoment.size() == 1);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
  for (int t = 0; t < 5; ++t) {
    const Eigen::VectorXd before = p;
    Eigen::VectorXd g(2);
    g << 3.0, 4.0;
    adamUniformStep(s, p, g);
    const Eigen::VectorXd update = p - before;
    CHECK(update(0) / update(1) == doctest::Approx(3.0 / 4.0).epsilon(1e-14));
  }
  // Varying gradients: update_i / m_i is the same for every coordinate.
  OptimizerState u = OptimizerState::create(OptimizerKind::AdamUniform, 4, {});
  Eigen::VectorXd q = Eigen::VectorXd::Zero(4);
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd g(4);
    g << 0.1 * t - 0.2, 1.5, -0.3 * t, 2.0 - t;
    const Eigen::VectorXd before = q;
    adamUniformStep(u, q, g);
    const Eigen::VectorXd ratio = (q - before).cwiseQuotient(u.firstMoment);
    for (int i = 1; i < 4; ++i) {
      if (u.firstMoment(i) != 0.0 && u.firstMoment(0) != 0.0) {
        CHECK(ratio(i) == doctest::Approx(ratio(0)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("adam uniform on a scalar matches adam") {
  OptimizerState a = OptimizerState::create(OptimizerKind::Adam, 1, {});
  OptimizerState b = OptimizerState::create(OptimizerKind::AdamUniform, 1, {});
  Eigen::VectorXd pa = Eigen::VectorXd::Constant(1, 1.0);
  Eigen::VectorXd pb = pa;
  const double grads[] = {0.5, -0.25, 3.0, -2.0, 0.125, 0.0, 1.0};
  for (double g : grads) {
    adamStep(a, pa, Eigen::VectorXd::Constant(1, g));
    adamUniformStep(b, pb, Eigen::VectorXd::Constant(1, g));
    CHECK(pa(0) == doctest::Approx(pb(0)).epsilon(1e-15));
    CHECK(a.secondMoment(0) == doctest::Approx(b.secondMoment(0)).epsilon(1e-15));
  }
}

TEST_CASE("optimizer rejects non-finite gradients and size mismatches") {
  OptimizerState s = OptimizerState::create(OptimizerKind::Adam, 2, {});
  Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd g(2);
  g << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adamStep(s, p, g), NumericalError);
  CHECK_THROWS_AS(adamStep(s, p, Eigen::VectorXd::Zero(3)), InputError);
  OptimizerState u = OptimizerState::create(OptimizerKind::AdamUniform, 2, {});
  g(1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adamUniformStep(u, p, g), NumericalError);
}

TEST_CASE("optimizer trajectories are deterministic") {
  auto run = [] {
    OptimizerState s = OptimizerState::create(OptimizerKind::AdamUniform, 3, {});
    Eigen::VectorXd p = Eigen::VectorXd::Zero(3);
    for (int t = 0; t < 50; ++t) {
      Eigen::VectorXd g(3);
      g << std::sin(t), std::cos(0.3 * t), 0.01 * t;
      adamUniformStep(s, p, g);
    }
    return p;
  };
  const Eigen::VectorXd a = run();
  const Eigen::VectorXd b = run();
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * 3) == 0);
}
