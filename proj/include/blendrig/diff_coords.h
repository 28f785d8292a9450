#pragma once

#include "blendrig/mesh.h"

#include <Eigen/SparseCholesky>

#include <memory>

namespace blendrig {

// Reparameterization u = (I + lambda L) x over the augmented vertex graph.
// The factorization of M = I + lambda L is computed once and shared by copies;
// solves on distinct right-hand sides are safe to run concurrently.
class DiffCoordSystem {
 public:
  DiffCoordSystem() = default;
  DiffCoordSystem(const SparseOperator& laplacian, double lambda);

  double lambda() const { return lambda_; }
  int dimension() const { return static_cast<int>(operator_.rows()); }
  const SparseOperator& op() const { return operator_; }

  Positions toDifferential(const Positions& x) const;
  Positions fromDifferential(const Positions& u) const;

  // Gradient w.r.t. u given the gradient w.r.t. x = from_differential(u).
  // M is symmetric, so this is the same solve as fromDifferential.
  Positions adjointFromDifferential(const Positions& cotangentX) const;

 private:
  using Factorization = Eigen::SimplicialLDLT<SparseOperator>;

  Positions solve(const Positions& rhs) const;

  double lambda_ = 0.0;
  SparseOperator operator_;
  std::shared_ptr<const Factorization> factorization_;
};

}  // namespace blendrig
