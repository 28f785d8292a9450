#include "blendrig/arap.h"

#include "blendrig/error.h"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <Eigen/SparseCholesky>

#include <cmath>

namespace blendrig {

namespace {

// Proper rotation closest to covariance^T in the Kabsch sense.
Eigen::Matrix3d rotationFromCovariance(const Eigen::Matrix3d& cov, bool* degenerate) {
  if (cov.norm() < 1e-300) {
    *degenerate = true;
    return Eigen::Matrix3d::Identity();
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d r = v * u.transpose();
  if (r.determinant() < 0.0) {
    u.col(2) *= -1.0;
    r = v * u.transpose();
  }
  *degenerate = false;
  return r;
}

}  // namespace

std::vector<Eigen::Matrix3d> fitArapRotations(const Positions& rest,
                                              const Positions& current,
                                              const std::vector<std::pair<int, int>>& edges,
                                              int* degenerateCount) {
  const auto n = static_cast<size_t>(rest.rows());
  std::vector<Eigen::Matrix3d> cov(n, Eigen::Matrix3d::Zero());
  for (const auto& [a, b] : edges) {
    const Eigen::Vector3d e = (rest.row(a) - rest.row(b)).transpose();
    const Eigen::Vector3d ep = (current.row(a) - current.row(b)).transpose();
    const Eigen::Matrix3d outer = e * ep.transpose();
    cov[static_cast<size_t>(a)] += outer;
    cov[static_cast<size_t>(b)] += outer;  // (-e)(-e')^T
  }
  std::vector<Eigen::Matrix3d> rotations(n);
  int degenerate = 0;
  for (size_t i = 0; i < n; ++i) {
    bool flag = false;
    rotations[i] = rotationFromCovariance(cov[i], &flag);
    degenerate += flag ? 1 : 0;
  }
  if (degenerateCount != nullptr) {
    *degenerateCount = degenerate;
  }
  return rotations;
}

double arapEnergy(const Positions& rest,
                  const Positions& current,
                  const std::vector<std::pair<int, int>>& edges,
                  const std::vector<Eigen::Matrix3d>& rotations) {
  double energy = 0.0;
  for (const auto& [a, b] : edges) {
    const Eigen::Vector3d e = (rest.row(a) - rest.row(b)).transpose();
    const Eigen::Vector3d ep = (current.row(a) - current.row(b)).transpose();
    energy += (ep - rotations[static_cast<size_t>(a)] * e).squaredNorm();
    energy += (ep - rotations[static_cast<size_t>(b)] * e).squaredNorm();
  }
  return energy;
}

ArapResult arapDeform(const ArapProblem& problem) {
  const int total = static_cast<int>(problem.rest.rows());
  const int pinned = static_cast<int>(problem.targets.rows());
  const int free = total - pinned;
  if (pinned <= 0 || free < 0) {
    throw InputError("ARAP: target count must be in (0, rest vertex count]");
  }
  if (!problem.rest.allFinite() || !problem.targets.allFinite()) {
    throw InputError("ARAP: non-finite rest or target positions");
  }

  // Initial guess: rigid best fit of the rest surface onto the targets, applied
  // to every vertex.
  Positions current(total, 3);
  {
    const Eigen::Matrix3Xd src = problem.rest.topRows(pinned).transpose();
    const Eigen::Matrix3Xd dst = problem.targets.transpose();
    Eigen::Matrix4d xf = Eigen::Matrix4d::Identity();
    if (pinned >= 3) {
      xf = Eigen::umeyama(src, dst, false);
    }
    const Eigen::Matrix3d r = xf.topLeftCorner<3, 3>();
    const Eigen::Vector3d t = xf.topRightCorner<3, 1>();
    for (int i = 0; i < total; ++i) {
      current.row(i) = (r * problem.rest.row(i).transpose() + t).transpose();
    }
    current.topRows(pinned) = problem.targets;
  }

  ArapResult result;
  if (free == 0) {
    result.interior = Positions(0, 3);
    result.energies.push_back(
        arapEnergy(problem.rest, current, problem.edges,
                   fitArapRotations(problem.rest, current, problem.edges)));
    return result;
  }

  // Global system over free vertices: sum_j (q_i - q_j) = sum_j (R_i + R_j)/2 (p_i - p_j).
  std::vector<Eigen::Triplet<double>> triplets;
  std::vector<std::vector<int>> neighbors(static_cast<size_t>(total));
  for (const auto& [a, b] : problem.edges) {
    neighbors[static_cast<size_t>(a)].push_back(b);
    neighbors[static_cast<size_t>(b)].push_back(a);
  }
  for (int i = pinned; i < total; ++i) {
    const int row = i - pinned;
    triplets.emplace_back(row, row, static_cast<double>(neighbors[static_cast<size_t>(i)].size()));
    for (int j : neighbors[static_cast<size_t>(i)]) {
      if (j >= pinned) {
        triplets.emplace_back(row, j - pinned, -1.0);
      }
    }
  }
  SparseOperator system(free, free);
  system.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SimplicialLDLT<SparseOperator> solver(system);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("ARAP: free-vertex system is singular (interior component not anchored)");
  }

  int degenerate = 0;
  auto rotations = fitArapRotations(problem.rest, current, problem.edges, &degenerate);
  double energy = arapEnergy(problem.rest, current, problem.edges, rotations);
  result.energies.push_back(energy);

  for (int iter = 0; iter < problem.maxIterations; ++iter) {
    Eigen::MatrixX3d rhs = Eigen::MatrixX3d::Zero(free, 3);
    for (int i = pinned; i < total; ++i) {
      const auto si = static_cast<size_t>(i);
      Eigen::Vector3d b = Eigen::Vector3d::Zero();
      for (int j : neighbors[si]) {
        const auto sj = static_cast<size_t>(j);
        const Eigen::Vector3d e = (problem.rest.row(i) - problem.rest.row(j)).transpose();
        b += 0.5 * (rotations[si] + rotations[sj]) * e;
        if (j < pinned) {
          b += current.row(j).transpose();
        }
      }
      rhs.row(i - pinned) = b.transpose();
    }
    const Eigen::MatrixX3d solved = solver.solve(rhs);
    if (!solved.allFinite()) {
      throw NumericalError("ARAP: global solve produced non-finite positions");
    }
    current.bottomRows(free) = solved;

    rotations = fitArapRotations(problem.rest, current, problem.edges, &degenerate);
    const double next = arapEnergy(problem.rest, current, problem.edges, rotations);
    result.energies.push_back(next);
    result.iterations = iter + 1;
    const double decrease = energy - next;
    energy = next;
    if (energy <= 0.0 || decrease <= problem.tolerance * std::max(energy + decrease, 1e-300)) {
      break;
    }
  }
  result.degenerateRotations = degenerate;
  result.interior = current.bottomRows(free);
  return result;
}

}  // namespace blendrig
