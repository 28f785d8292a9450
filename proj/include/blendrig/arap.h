#pragma once

#include "blendrig/mesh.h"

#include <vector>

namespace blendrig {

// Surface vertices (the first `targets.rows()` rows of `rest`) are pinned to
// `targets`; the remaining (interior) vertices are free. Edge weights are uniform.
struct ArapProblem {
  Positions rest;
  Positions targets;
  std::vector<std::pair<int, int>> edges;
  int maxIterations = 100;
  double tolerance = 1e-8;  // relative energy decrease
};

struct ArapResult {
  Positions interior;
  // energies[k] = min over rotations of the ARAP energy of iterate k (k = 0 is the
  // initial guess).
  std::vector<double> energies;
  int iterations = 0;
  int degenerateRotations = 0;  // 1-rings that fell back to identity in the last local step
};

ArapResult arapDeform(const ArapProblem& problem);

// Energy sum_i sum_{j in N(i)} |(q_i - q_j) - R_i (p_i - p_j)|^2 with the given rotations.
double arapEnergy(const Positions& rest,
                  const Positions& current,
                  const std::vector<std::pair<int, int>>& edges,
                  const std::vector<Eigen::Matrix3d>& rotations);

// Best-fit per-vertex rotations (local step). Counts degenerate 1-rings.
std::vector<Eigen::Matrix3d> fitArapRotations(const Positions& rest,
                                              const Positions& current,
                                              const std::vector<std::pair<int, int>>& edges,
                                              int* degenerateCount = nullptr);

}  // namespace blendrig
