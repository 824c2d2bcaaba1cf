#include <doctest.h>

#include <cmath>

#include "vjpsketch/decomp.hpp"
#include "vjpsketch/sketch.hpp"

using namespace vjpsketch;

namespace {

Matrix random_symmetric(std::size_t n, Rng& rng) {
  const Matrix b = Matrix::random_gaussian(n, n, rng);
  Matrix a(n, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) a(i, j) = 0.5 * (b(i, j) + b(j, i));
  return a;
}

double orthogonality_error(const Matrix& q) {
  const Matrix qtq = matmul_at_b(q, q);
  double worst = 0.0;
  for (std::size_t j = 0; j < qtq.cols(); ++j)
    for (std::size_t i = 0; i < qtq.rows(); ++i)
      worst = std::max(worst, std::abs(qtq(i, j) - (i == j ? 1.0 : 0.0)));
  return worst;
}

Matrix eig_reconstruction(const SymEig& eig) {
  const std::size_t n = eig.eigenvalues.size();
  Matrix scaled = eig.eigenvectors;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) scaled(i, j) *= eig.eigenvalues[j];
  return matmul_a_bt(scaled, eig.eigenvectors);
}

Matrix svd_reconstruction(const Svd& dec) {
  Matrix scaled = dec.u;
  for (std::size_t j = 0; j < dec.singular_values.size(); ++j)
    for (std::size_t i = 0; i < scaled.rows(); ++i) scaled(i, j) *= dec.singular_values[j];
  return matmul_a_bt(scaled, dec.v);
}

}  // namespace

TEST_CASE("sym_eig on the identity") {
  const SymEig eig = sym_eig(Matrix::identity(3));
  for (double v : eig.eigenvalues) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(orthogonality_error(eig.eigenvectors) < 1e-12);
}

TEST_CASE("sym_eig on a diagonal matrix sorts descending") {
  const double d[] = {1.0, 3.0};
  const SymEig eig = sym_eig(Matrix::diagonal(d));
  CHECK(eig.eigenvalues[0] == doctest::Approx(3.0));
  CHECK(eig.eigenvalues[1] == doctest::Approx(1.0));
  // Q is a permuted identity.
  CHECK(std::abs(eig.eigenvectors(1, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(eig.eigenvectors(0, 1)) == doctest::Approx(1.0));
}

TEST_CASE("sym_eig reconstruction and orthogonality on random matrices") {
  Rng rng(13);
  for (std::size_t n : {8u, 31u, 64u, 256u}) {
    const Matrix a = random_symmetric(n, rng);
    const SymEig eig = sym_eig(a);
    CHECK(orthogonality_error(eig.eigenvectors) < 1e-10);
    const Matrix residual = eig_reconstruction(eig) - a;
    CHECK(residual.frobenius_norm() <= 1e-9 * a.frobenius_norm());
    for (std::size_t i = 1; i < n; ++i)
      CHECK(eig.eigenvalues[i - 1] >= eig.eigenvalues[i]);
  }
}

TEST_CASE("sym_eig rejects bad input") {
  CHECK_THROWS(sym_eig(Matrix(2, 3)));
  Matrix asym = Matrix::from_rows({{1.0, 2.0}, {0.5, 1.0}});
  CHECK_THROWS(sym_eig(asym));
}

TEST_CASE("second moments have non-negative spectrum") {
  Rng rng(17);
  for (int rep = 0; rep < 5; ++rep) {
    const GradBatch batch(Matrix::random_gaussian(12, 4, rng));
    const SymEig eig = sym_eig(batch.second_moment());
    const double lambda_max = eig.eigenvalues.front();
    CHECK(eig.eigenvalues.back() >= -1e-12 * lambda_max);
  }
}

TEST_CASE("svd of a diagonal matrix") {
  const double d[] = {3.0, 2.0, 1.0};
  const Svd dec = svd(Matrix::diagonal(d));
  CHECK(dec.singular_values[0] == doctest::Approx(3.0));
  CHECK(dec.singular_values[1] == doctest::Approx(2.0));
  CHECK(dec.singular_values[2] == doctest::Approx(1.0));
}

TEST_CASE("svd of the zero matrix") {
  const Svd dec = svd(Matrix(4, 3));
  for (double s : dec.singular_values) CHECK(s == 0.0);
  CHECK(orthogonality_error(dec.u) < 1e-12);
  CHECK(orthogonality_error(dec.v) < 1e-12);
}

TEST_CASE("svd squares match the eigenvalues of M^T M") {
  Rng rng(19);
  const Matrix m = Matrix::random_gaussian(6, 4, rng);
  const Svd dec = svd(m);
  const SymEig eig = sym_eig(matmul_at_b(m, m));
  for (std::size_t i = 0; i < 4; ++i) {
    const double sq = dec.singular_values[i] * dec.singular_values[i];
    CHECK(std::abs(sq - eig.eigenvalues[i]) <= 1e-9 * std::max(1.0, eig.eigenvalues[0]));
  }
}

TEST_CASE("svd reconstruction, orthogonality, transpose invariance") {
  Rng rng(23);
  for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{6, 4},
                            {40, 64},
                            {256, 128}}) {
    const Matrix m = Matrix::random_gaussian(rows, cols, rng);
    const Svd dec = svd(m);
    CHECK(orthogonality_error(dec.u) < 1e-10);
    CHECK(orthogonality_error(dec.v) < 1e-10);
    const Matrix residual = svd_reconstruction(dec) - m;
    CHECK(residual.frobenius_norm() <= 1e-9 * m.frobenius_norm());

    const Svd dec_t = svd(m.transposed());
    for (std::size_t i = 0; i < dec.singular_values.size(); ++i)
      CHECK(std::abs(dec.singular_values[i] - dec_t.singular_values[i]) <=
            1e-10 * dec.singular_values[0]);
  }
}

TEST_CASE("psd roots of the identity") {
  const PsdSqrt roots = psd_sqrt_and_pinv_sqrt(Matrix::identity(5));
  CHECK(roots.range_dim == 5);
  CHECK((roots.sqrt - Matrix::identity(5)).frobenius_norm() < 1e-12);
  CHECK((roots.pinv_sqrt - Matrix::identity(5)).frobenius_norm() < 1e-12);
}

TEST_CASE("psd roots of a rank-deficient diagonal") {
  const double d[] = {4.0, 0.0};
  const PsdSqrt roots = psd_sqrt_and_pinv_sqrt(Matrix::diagonal(d), 1e-10);
  CHECK(roots.range_dim == 1);
  CHECK(roots.sqrt(0, 0) == doctest::Approx(2.0));
  CHECK(roots.sqrt(1, 1) == doctest::Approx(0.0));
  CHECK(roots.pinv_sqrt(0, 0) == doctest::Approx(0.5));
  CHECK(roots.pinv_sqrt(1, 1) == doctest::Approx(0.0));
}

TEST_CASE("psd roots of a batch second moment project onto the gradient span") {
  Rng rng(29);
  const Matrix g = Matrix::random_gaussian(8, 4, rng);
  const GradBatch batch(g);
  const PsdSqrt roots = psd_sqrt_and_pinv_sqrt(batch.second_moment());
  CHECK(roots.range_dim == 4);

  // sqrt * sqrt reproduces Gamma.
  const Matrix gamma_again = matmul(roots.sqrt, roots.sqrt);
  CHECK((gamma_again - batch.second_moment()).frobenius_norm() <=
        1e-8 * batch.second_moment().frobenius_norm());

  // sqrt * pinv_sqrt equals the orthogonal projector onto col(G), from svd(G).
  const Svd dec = svd(g);
  Matrix u_range(8, 4);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t i = 0; i < 8; ++i) u_range(i, j) = dec.u(i, j);
  const Matrix projector = matmul_a_bt(u_range, u_range);
  const Matrix product = matmul(roots.sqrt, roots.pinv_sqrt);
  CHECK((product - projector).frobenius_norm() < 1e-8);
}

TEST_CASE("psd roots reject indefinite input") {
  const double d[] = {1.0, -0.5};
  CHECK_THROWS(psd_sqrt_and_pinv_sqrt(Matrix::diagonal(d), 1e-10));
}
