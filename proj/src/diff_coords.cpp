#include "blendrig/diff_coords.h"

#include "blendrig/error.h"

namespace blendrig {

DiffCoordSystem::DiffCoordSystem(const SparseOperator& laplacian, double lambda) : lambda_(lambda) {
  if (!(lambda >= 0.0)) {
    throw InputError(detail::concat("lambda must be nonnegative, got ", lambda));
  }
  if (laplacian.rows() != laplacian.cols()) {
    throw InputError("Laplacian must be square");
  }
  SparseOperator identity(laplacian.rows(), laplacian.cols());
  identity.setIdentity();
  operator_ = identity + lambda * laplacian;
  operator_.makeCompressed();
  auto fac = std::make_shared<Factorization>(operator_);
  if (fac->info() != Eigen::Success) {
    throw NumericalError("factorization of I + lambda L failed; operator is corrupted");
  }
  factorization_ = std::move(fac);
}

Positions DiffCoordSystem::toDifferential(const Positions& x) const {
  if (x.rows() != operator_.rows()) {
    throw InputError(detail::concat("to_differential: expected ", operator_.rows(), " rows, got ",
                                    x.rows()));
  }
  const Eigen::MatrixX3d colMajor = x;
  return Positions(operator_ * colMajor);
}

Positions DiffCoordSystem::fromDifferential(const Positions& u) const { return solve(u); }

Positions DiffCoordSystem::adjointFromDifferential(const Positions& cotangentX) const {
  return solve(cotangentX);
}

Positions DiffCoordSystem::solve(const Positions& rhs) const {
  if (!factorization_) {
    throw InputError("differential coordinate system is not initialized");
  }
  if (rhs.rows() != operator_.rows()) {
    throw InputError(detail::concat("solve: expected ", operator_.rows(), " rows, got ",
                                    rhs.rows()));
  }
  const Eigen::MatrixX3d colMajor = rhs;
  Eigen::MatrixX3d x = factorization_->solve(colMajor);
  if (factorization_->info() != Eigen::Success || !x.allFinite()) {
    throw NumericalError("differential coordinate solve failed");
  }
  return Positions(x);
}

}  // namespace blendrig
