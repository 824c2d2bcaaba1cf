#pragma once

#include <cstddef>

#include "vjpsketch/matrix.hpp"

namespace vjpsketch {

/// Eigendecomposition of a symmetric matrix: A = Q diag(eigenvalues) Q^T,
/// eigenvalues descending, Q orthogonal (columns are eigenvectors).
struct SymEig {
  Vector eigenvalues;
  Matrix eigenvectors;
};

/// Thin SVD: M = sum_i singular_values[i] * u_i v_i^T, values descending >= 0.
/// u and v hold min(rows, cols) orthonormal columns.
struct Svd {
  Vector singular_values;
  Matrix u;
  Matrix v;
};

struct PsdSqrt {
  Matrix sqrt;       // A^{1/2}
  Matrix pinv_sqrt;  // A^{+1/2}, inverts A^{1/2} on its range
  std::size_t range_dim = 0;
};

/// Cyclic Jacobi rotations; input must be square and symmetric to 1e-12
/// relative. Quadratically convergent and adequate for n <= ~512.
SymEig sym_eig(const Matrix& a);

/// One-sided (Hestenes) Jacobi SVD.
Svd svd(const Matrix& m);

/// Square root and pseudo-inverse square root of a symmetric PSD matrix.
/// Eigenvalues below rank_tol * lambda_max are treated as zero; an eigenvalue
/// under -rank_tol * lambda_max is a not-PSD error. rank_tol < 0 selects the
/// default 1e-10 * n.
PsdSqrt psd_sqrt_and_pinv_sqrt(const Matrix& a, double rank_tol = -1.0);

}  // namespace vjpsketch
