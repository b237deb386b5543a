// SPDX-License-Identifier: Apache-2.0
#include "customdiff/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "customdiff/error.hpp"

namespace cdiff::linalg {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kJacobiTol = 1e-12;
constexpr int kMaxSweeps = 100;

// Completes the zero columns of q (flagged in `zero`) to an orthonormal set
// using standard basis vectors and two rounds of Gram–Schmidt.
void complete_orthonormal(Matrix& q, const std::vector<bool>& zero) {
  const std::size_t m = q.rows();
  const std::size_t r = q.cols();
  std::size_t next_basis = 0;
  for (std::size_t j = 0; j < r; ++j) {
    if (!zero[j]) continue;
    for (; next_basis < m; ++next_basis) {
      std::vector<double> v(m, 0.0);
      v[next_basis] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < r; ++k) {
          if (k == j || (zero[k] && k > j)) continue;
          double proj = 0.0;
          for (std::size_t i = 0; i < m; ++i) proj += q(i, k) * v[i];
          for (std::size_t i = 0; i < m; ++i) v[i] -= proj * q(i, k);
        }
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (std::size_t i = 0; i < m; ++i) q(i, j) = v[i] / norm;
        ++next_basis;
        break;
      }
    }
  }
}

// Jacobi SVD for m >= n.
SvdResult jacobi_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix u = a;
  Matrix v = Matrix::identity(n);

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double up = u(i, p), uq = u(i, q);
          alpha += up * up;
          beta += uq * uq;
          gamma += up * uq;
        }
        if (gamma == 0.0 || std::abs(gamma) <= kJacobiTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double up = u(i, p), uq = u(i, q);
          u(i, p) = c * up - s * uq;
          u(i, q) = s * up + c * uq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += u(i, j) * u(i, j);
    sigma[j] = std::sqrt(s);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  const double smax = n == 0 ? 0.0 : sigma[order[0]];
  const double cutoff = smax * kEps * static_cast<double>(std::max(m, n));

  SvdResult out;
  out.u = Matrix(m, n);
  out.vt = Matrix(n, n);
  out.sigma.resize(n);
  std::vector<bool> zero(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    const double s = sigma[j];
    if (s <= cutoff || s == 0.0) {
      out.sigma[k] = 0.0;
      zero[k] = true;
    } else {
      out.sigma[k] = s;
      for (std::size_t i = 0; i < m; ++i) out.u(i, k) = u(i, j) / s;
    }
    for (std::size_t i = 0; i < n; ++i) out.vt(k, i) = v(i, j);
  }
  complete_orthonormal(out.u, zero);
  return out;
}

}  // namespace

Matrix SvdResult::reconstruct() const { return reconstruct(sigma.size()); }

Matrix SvdResult::reconstruct(std::size_t rank) const {
  rank = std::min(rank, sigma.size());
  Matrix out(u.rows(), vt.cols());
  for (std::size_t k = 0; k < rank; ++k) {
    const double s = sigma[k];
    if (s == 0.0) continue;
    for (std::size_t i = 0; i < u.rows(); ++i) {
      const double us = u(i, k) * s;
      for (std::size_t j = 0; j < vt.cols(); ++j) out(i, j) += us * vt(k, j);
    }
  }
  return out;
}

SvdResult thin_svd(const Matrix& a) {
  if (!all_finite(a)) fail(ErrorCode::InvalidInput, "thin_svd: non-finite input");
  if (a.rows() >= a.cols()) return jacobi_tall(a);
  SvdResult t = jacobi_tall(a.transposed());
  SvdResult out;
  out.u = t.vt.transposed();
  out.sigma = std::move(t.sigma);
  out.vt = t.u.transposed();
  return out;
}

Matrix solve_ridge(const Matrix& a, const Matrix& b, double lambda) {
  if (a.rows() != b.rows()) {
    fail(ErrorCode::InvalidInput, "solve_ridge: a has " + std::to_string(a.rows()) +
                                      " rows but b has " + std::to_string(b.rows()));
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    fail(ErrorCode::InvalidInput, "solve_ridge: lambda must be a finite non-negative value");
  }
  if (!all_finite(a) || !all_finite(b)) fail(ErrorCode::InvalidInput, "solve_ridge: non-finite input");

  const std::size_t n = a.cols();
  const std::size_t k = b.cols();
  const std::size_t m = lambda > 0.0 ? a.rows() + n : a.rows();
  if (m < n) fail(ErrorCode::SingularMatrix, "solve_ridge: underdetermined system without ridge");

  // Augmented system [a; sqrt(lambda)·I] x = [b; 0].
  Matrix r(m, n);
  Matrix rhs(m, k);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < n; ++j) r(i, j) = a(i, j);
    for (std::size_t j = 0; j < k; ++j) rhs(i, j) = b(i, j);
  }
  if (lambda > 0.0) {
    const double sl = std::sqrt(lambda);
    for (std::size_t j = 0; j < n; ++j) r(a.rows() + j, j) = sl;
  }

  double scale = 0.0;
  for (double v : r.data()) scale = std::max(scale, std::abs(v));

  // Householder QR applied in place to r and rhs.
  for (std::size_t col = 0; col < n; ++col) {
    double norm = 0.0;
    for (std::size_t i = col; i < m; ++i) norm += r(i, col) * r(i, col);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    const double alpha = r(col, col) > 0.0 ? -norm : norm;
    std::vector<double> v(m - col);
    for (std::size_t i = col; i < m; ++i) v[i - col] = r(i, col);
    v[0] -= alpha;
    double vnorm2 = 0.0;
    for (double x : v) vnorm2 += x * x;
    if (vnorm2 == 0.0) continue;
    for (std::size_t j = col; j < n; ++j) {
      double proj = 0.0;
      for (std::size_t i = col; i < m; ++i) proj += v[i - col] * r(i, j);
      proj = 2.0 * proj / vnorm2;
      for (std::size_t i = col; i < m; ++i) r(i, j) -= proj * v[i - col];
    }
    for (std::size_t j = 0; j < k; ++j) {
      double proj = 0.0;
      for (std::size_t i = col; i < m; ++i) proj += v[i - col] * rhs(i, j);
      proj = 2.0 * proj / vnorm2;
      for (std::size_t i = col; i < m; ++i) rhs(i, j) -= proj * v[i - col];
    }
  }

  const double tol = scale * kEps * static_cast<double>(std::max(m, n)) * 10.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(std::abs(r(i, i)) > tol)) {
      fail(ErrorCode::SingularMatrix,
           "solve_ridge: rank-deficient system (column " + std::to_string(i) + ")");
    }
  }

  Matrix x(n, k);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t ii = n; ii-- > 0;) {
      double s = rhs(ii, j);
      for (std::size_t c = ii + 1; c < n; ++c) s -= r(ii, c) * x(c, j);
      x(ii, j) = s / r(ii, ii);
    }
  }
  return x;
}

Matrix solve_linear(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows();
  if (a.cols() != n) fail(ErrorCode::InvalidInput, "solve_linear: matrix is not square");
  if (b.rows() != n) fail(ErrorCode::InvalidInput, "solve_linear: right-hand side row mismatch");
  if (!all_finite(a) || !all_finite(b)) fail(ErrorCode::InvalidInput, "solve_linear: non-finite input");

  Matrix lu = a;
  Matrix x = b;
  const std::size_t k = b.cols();
  double scale = 0.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  const double tol = scale * kEps * static_cast<double>(n) * 10.0;

  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t i = col + 1; i < n; ++i)
      if (std::abs(lu(i, col)) > std::abs(lu(pivot, col))) pivot = i;
    if (!(std::abs(lu(pivot, col)) > tol)) {
      fail(ErrorCode::SingularMatrix, "solve_linear: singular matrix (pivot " + std::to_string(col) + ")");
    }
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(col, j), lu(pivot, j));
      for (std::size_t j = 0; j < k; ++j) std::swap(x(col, j), x(pivot, j));
    }
    const double p = lu(col, col);
    for (std::size_t i = col + 1; i < n; ++i) {
      const double f = lu(i, col) / p;
      if (f == 0.0) continue;
      lu(i, col) = f;
      for (std::size_t j = col + 1; j < n; ++j) lu(i, j) -= f * lu(col, j);
      for (std::size_t j = 0; j < k; ++j) x(i, j) -= f * x(col, j);
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = n; i-- > 0;) {
      double s = x(i, j);
      for (std::size_t c = i + 1; c < n; ++c) s -= lu(i, c) * x(c, j);
      x(i, j) = s / lu(i, i);
    }
  }
  return x;
}

Matrix inverse(const Matrix& a) { return solve_linear(a, Matrix::identity(a.rows())); }

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace cdiff::linalg
