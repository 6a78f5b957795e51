#pragma once

#include "fbsde/common.hpp"

namespace fbsde {

/// Solves a tridiagonal system with the Thomas algorithm.
///
/// Row i reads lower(i) x(i-1) + diag(i) x(i) + upper(i) x(i+1) = rhs(i);
/// lower(0) and upper(n-1) are ignored. No pivoting: callers supply
/// diagonally dominant systems (implicit diffusion always is).
template <typename Scalar>
VectorX<Scalar> solve_tridiagonal(const VectorX<Scalar>& lower, const VectorX<Scalar>& diag,
                                  const VectorX<Scalar>& upper, const VectorX<Scalar>& rhs) {
  const Eigen::Index n = diag.size();
  VectorX<Scalar> c_prime(n);
  VectorX<Scalar> x(n);
  c_prime(0) = upper(0) / diag(0);
  x(0) = rhs(0) / diag(0);
  for (Eigen::Index i = 1; i < n; ++i) {
    const Scalar denom = diag(i) - lower(i) * c_prime(i - 1);
    c_prime(i) = (i + 1 < n) ? upper(i) / denom : Scalar(0);
    x(i) = (rhs(i) - lower(i) * x(i - 1)) / denom;
  }
  for (Eigen::Index i = n - 1; i > 0; --i) x(i - 1) -= c_prime(i - 1) * x(i);
  return x;
}

}  // namespace fbsde
