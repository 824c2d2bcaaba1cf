#include "vjpsketch/decomp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vjpsketch {

namespace {

// Descending sort permutation for `values`.
std::vector<std::size_t> descending_order(const Vector& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return order;
}

}  // namespace

SymEig sym_eig(const Matrix& a) {
  require(a.rows() == a.cols(), "sym_eig: matrix must be square");
  const std::size_t n = a.rows();
  const double scale = a.max_abs();
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < j; ++i)
      require(std::abs(a(i, j) - a(j, i)) <= 1e-12 * std::max(scale, 1e-300),
              "sym_eig: matrix is not symmetric");

  Matrix s = a;
  Matrix q = Matrix::identity(n);
  const double total = std::max(a.frobenius_norm(), 1e-300);

  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < j; ++i) off += 2.0 * s(i, j) * s(i, j);
    if (std::sqrt(off) <= 1e-14 * total) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t r = p + 1; r < n; ++r) {
        const double apq = s(p, r);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (s(r, r) - s(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        // Rotate rows/columns p and r of S.
        for (std::size_t k = 0; k < n; ++k) {
          const double skp = s(k, p), skr = s(k, r);
          s(k, p) = c * skp - sn * skr;
          s(k, r) = sn * skp + c * skr;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double spk = s(p, k), srk = s(r, k);
          s(p, k) = c * spk - sn * srk;
          s(r, k) = sn * spk + c * srk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double qkp = q(k, p), qkr = q(k, r);
          q(k, p) = c * qkp - sn * qkr;
          q(k, r) = sn * qkp + c * qkr;
        }
      }
    }
  }

  Vector eigenvalues(n);
  for (std::size_t i = 0; i < n; ++i) eigenvalues[i] = s(i, i);
  const auto order = descending_order(eigenvalues);

  SymEig result;
  result.eigenvalues.resize(n);
  result.eigenvectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    result.eigenvalues[j] = eigenvalues[order[j]];
    for (std::size_t i = 0; i < n; ++i) result.eigenvectors(i, j) = q(i, order[j]);
  }
  return result;
}

Svd svd(const Matrix& m) {
  require(m.all_finite(), "svd: entries must be finite");
  if (m.rows() < m.cols()) {
    Svd t = svd(m.transposed());
    return Svd{std::move(t.singular_values), std::move(t.v), std::move(t.u)};
  }

  const std::size_t rows = m.rows(), n = m.cols();
  Matrix a = m;
  Matrix v = Matrix::identity(n);

  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double* ai = a.col(i);
        double* aj = a.col(j);
        double aii = 0.0, ajj = 0.0, aij = 0.0;
        for (std::size_t k = 0; k < rows; ++k) {
          aii += ai[k] * ai[k];
          ajj += aj[k] * aj[k];
          aij += ai[k] * aj[k];
        }
        if (aij == 0.0 || std::abs(aij) <= 1e-15 * std::sqrt(aii * ajj)) continue;
        rotated = true;
        const double theta = (ajj - aii) / (2.0 * aij);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < rows; ++k) {
          const double x = ai[k], y = aj[k];
          ai[k] = c * x - sn * y;
          aj[k] = sn * x + c * y;
        }
        double* vi = v.col(i);
        double* vj = v.col(j);
        for (std::size_t k = 0; k < n; ++k) {
          const double x = vi[k], y = vj[k];
          vi[k] = c * x - sn * y;
          vj[k] = sn * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }

  Vector norms(n);
  for (std::size_t j = 0; j < n; ++j)
    norms[j] = l2_norm(std::span<const double>(a.col(j), rows));
  const auto order = descending_order(norms);

  Svd result;
  result.singular_values.resize(n);
  result.u = Matrix(rows, n);
  result.v = Matrix(n, n);
  const double sigma_max = norms.empty() ? 0.0 : norms[order[0]];
  std::size_t filled = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    result.singular_values[j] = norms[src];
    for (std::size_t i = 0; i < n; ++i) result.v(i, j) = v(i, src);
    if (norms[src] > sigma_max * 1e-300 && norms[src] > 0.0) {
      for (std::size_t i = 0; i < rows; ++i) result.u(i, j) = a(i, src) / norms[src];
      filled = j + 1;
    }
  }
  // Complete numerically-zero columns of U to an orthonormal set.
  for (std::size_t j = filled; j < n; ++j) {
    Vector candidate(rows, 0.0);
    for (std::size_t basis = 0; basis < rows; ++basis) {
      std::fill(candidate.begin(), candidate.end(), 0.0);
      candidate[basis] = 1.0;
      for (std::size_t k = 0; k < j; ++k) {
        const double proj = dot(candidate, std::span<const double>(result.u.col(k), rows));
        const double* uk = result.u.col(k);
        for (std::size_t i = 0; i < rows; ++i) candidate[i] -= proj * uk[i];
      }
      const double nrm = l2_norm(candidate);
      if (nrm > 0.5) {
        for (std::size_t i = 0; i < rows; ++i) result.u(i, j) = candidate[i] / nrm;
        break;
      }
    }
  }
  return result;
}

PsdSqrt psd_sqrt_and_pinv_sqrt(const Matrix& a, double rank_tol) {
  const SymEig eig = sym_eig(a);
  const std::size_t n = a.rows();
  if (rank_tol < 0.0) rank_tol = 1e-10 * static_cast<double>(n);
  const double lambda_max = eig.eigenvalues.empty() ? 0.0 : std::max(eig.eigenvalues[0], 0.0);
  const double threshold = rank_tol * lambda_max;

  Vector sqrt_vals(n, 0.0), inv_sqrt_vals(n, 0.0);
  std::size_t range_dim = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lambda = eig.eigenvalues[i];
    if (lambda < -threshold)
      throw std::domain_error("psd_sqrt_and_pinv_sqrt: matrix is not PSD (eigenvalue " +
                              std::to_string(lambda) + ")");
    if (lambda > threshold) {
      sqrt_vals[i] = std::sqrt(lambda);
      inv_sqrt_vals[i] = 1.0 / sqrt_vals[i];
      ++range_dim;
    }
  }

  const Matrix& q = eig.eigenvectors;
  PsdSqrt out;
  out.range_dim = range_dim;
  Matrix qs(n, n), qi(n, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) {
      qs(i, j) = q(i, j) * sqrt_vals[j];
      qi(i, j) = q(i, j) * inv_sqrt_vals[j];
    }
  out.sqrt = matmul_a_bt(qs, q);
  out.pinv_sqrt = matmul_a_bt(qi, q);
  return out;
}

}  // namespace vjpsketch
