// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "customdiff/matrix.hpp"

namespace cdiff::linalg {

/// Ridge strength used when a caller asks for automatic conditioning.
inline constexpr double kAutoRidgeLambda = 1e-8;

/// Thin singular value decomposition a = u·diag(sigma)·vt with
/// r = min(rows, cols), sigma non-negative and non-increasing.
struct SvdResult {
  Matrix u;                    // m×r, orthonormal columns
  std::vector<double> sigma;   // length r
  Matrix vt;                   // r×n, orthonormal rows

  Matrix reconstruct() const;
  Matrix reconstruct(std::size_t rank) const;
};

/// One-sided (Hestenes) Jacobi SVD. Throws InvalidInput on non-finite input.
SvdResult thin_svd(const Matrix& a);

/// Minimizes ‖a·x − b‖²_F + lambda‖x‖²_F through a Householder QR of the
/// (optionally ridge-augmented) system. lambda = 0 with rank-deficient a
/// throws SingularMatrix.
Matrix solve_ridge(const Matrix& a, const Matrix& b, double lambda);

/// Square system a·x = b by LU with partial pivoting; SingularMatrix when a
/// pivot vanishes relative to the matrix scale.
Matrix solve_linear(const Matrix& a, const Matrix& b);

Matrix inverse(const Matrix& a);

double frobenius_norm(const Matrix& a);

}  // namespace cdiff::linalg
