#include <gtest/gtest.h>

#include <cmath>

#include "gtc/linalg.hpp"
#include "support.hpp"

namespace gtc {
namespace {

using linalg::operator_norm;
using linalg::pivoted_row_basis;
using linalg::pseudo_inverse;
using linalg::project_columns;
using linalg::svd;
using linalg::truncated_svd;
using testing::random_matrix;

double spectral(const Matrix& m) { return testing::oracle_spectral_norm(m); }

TEST(Matrix, RejectsNonFiniteAndBadShapes) {
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ValidationError);
  EXPECT_THROW(Matrix(1, 1, std::vector<double>{NAN}), ValidationError);
  EXPECT_THROW(Matrix(1, 1, std::vector<double>{INFINITY}), ValidationError);
  EXPECT_THROW(Matrix(2, 3) * Matrix(2, 3), ValidationError);
}

TEST(OperatorNorm, Identity) { EXPECT_NEAR(operator_norm(Matrix::identity(8), 1e-6), 1.0, 1e-12); }

TEST(OperatorNorm, Diagonal) {
  const Matrix m{{3, 0, 0}, {0, 1, 0}, {0, 0, 0.5}};
  EXPECT_NEAR(operator_norm(m, 1e-6), 3.0, 3e-6);
}

TEST(OperatorNorm, MatchesSvdOracleOnRandom16) {
  const Matrix m = random_matrix(16, 16, 11);
  const double full = truncated_svd(m, 16).singular_values[0];
  EXPECT_NEAR(operator_norm(m, 1e-8) / full, 1.0, 1e-6);
}

TEST(OperatorNorm, AgreesWithSvdAcrossShapes) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t r = 1 + rng() % 64;
    const std::size_t c = 1 + rng() % 64;
    const Matrix m = gaussian_matrix(r, c, rng);
    const double ref = truncated_svd(m, std::min(r, c)).singular_values[0];
    EXPECT_NEAR(operator_norm(m, 1e-9) / ref, 1.0, 1e-6) << r << "x" << c << " seed " << seed;
  }
}

TEST(OperatorNorm, StartVectorOrthogonalToTopDirection) {
  // ones/√2 lies in the null space of the dominant singular direction.
  const Matrix m{{5, -5}, {0.1, 0.1}};
  EXPECT_NEAR(operator_norm(m, 1e-9) / spectral(m), 1.0, 1e-8);
}

TEST(OperatorNorm, ZeroMatrixAndArguments) {
  EXPECT_EQ(operator_norm(Matrix(3, 4), 1e-6), 0.0);
  EXPECT_THROW(operator_norm(Matrix(), 1e-6), ValidationError);
  EXPECT_THROW(operator_norm(Matrix::identity(2), 0.0), ValidationError);
  EXPECT_THROW(operator_norm(Matrix::identity(2), 0.1), ValidationError);
}

TEST(OperatorNorm, IterationCapReportsLastEstimate) {
  // Two nearly equal top singular values converge slowly.
  const Matrix m{{1.0, 0.0}, {0.0, 1.0 - 1e-9}};
  const Matrix rotated = m * Matrix{{0.6, 0.8}, {-0.8, 0.6}};
  try {
    operator_norm(rotated, 1e-12, 2);
    SUCCEED();  // may legitimately stop on stagnation
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.iterations(), 2u);
    EXPECT_GT(e.last_estimate(), 0.9);
  }
}

TEST(Svd, OrthonormalFactorsAndReconstruction) {
  for (auto [r, c] : {std::pair{10, 6}, {6, 10}, {12, 12}, {1, 5}, {5, 1}, {40, 3}}) {
    const Matrix m = random_matrix(r, c, 100 + r * 7 + c);
    const auto s = svd(m);
    EXPECT_LE(linalg::orthonormality_defect(s.left_basis), 1e-9);
    EXPECT_LE(linalg::orthonormality_defect(s.right_basis), 1e-9);
    EXPECT_LE(spectral(s.reconstruct() - m), 1e-8 * s.singular_values[0]);
    for (std::size_t i = 1; i < s.rank(); ++i)
      EXPECT_GE(s.singular_values[i - 1], s.singular_values[i]);
    const auto oracle = testing::oracle_singular_values(m);
    for (std::size_t i = 0; i < s.rank(); ++i) EXPECT_NEAR(s.singular_values[i], oracle(i), 1e-10);
  }
}

TEST(Svd, RankDeficientStillOrthonormal) {
  const Matrix a = random_matrix(9, 2, 5);
  const Matrix b = random_matrix(2, 7, 6);
  const Matrix m = a * b;  // rank 2
  for (const Matrix& x : {m, m.transpose(), Matrix(4, 3)}) {
    const auto s = svd(x);
    EXPECT_LE(linalg::orthonormality_defect(s.left_basis), 1e-9);
    EXPECT_LE(linalg::orthonormality_defect(s.right_basis), 1e-9);
    EXPECT_LE(max_abs_diff(s.reconstruct(), x), 1e-10);
  }
}

TEST(Svd, SignsCanonicalized) {
  const Matrix m = random_matrix(7, 5, 3);
  const auto s = svd(m);
  for (std::size_t c = 0; c < s.left_basis.cols(); ++c) {
    double best = 0.0;
    for (std::size_t r = 0; r < s.left_basis.rows(); ++r)
      if (std::abs(s.left_basis(r, c)) > std::abs(best)) best = s.left_basis(r, c);
    EXPECT_GT(best, 0.0);
  }
  EXPECT_EQ(svd(m).left_basis, s.left_basis);
  EXPECT_EQ((svd(m * -1.0).singular_values), s.singular_values);
}

TEST(TruncatedSvd, RankOneExact) {
  const Matrix u{{1}, {2}, {-3}};
  const Matrix v{{0.5, -1, 4, 2}};
  const Matrix m = u * v;
  EXPECT_LE(max_abs_diff(truncated_svd(m, 1).reconstruct(), m), 1e-10);
}

TEST(TruncatedSvd, DiagonalResidual) {
  const Matrix m{{3, 0, 0}, {0, 1, 0}, {0, 0, 0.5}};
  EXPECT_NEAR(spectral(m - truncated_svd(m, 2).reconstruct()), 0.5, 1e-12);
}

TEST(TruncatedSvd, ResidualMatchesDiscardedSpectrum) {
  const Matrix m = random_matrix(10, 6, 42);
  const auto oracle = testing::oracle_singular_values(m);
  double tail = 0.0;
  for (int i = 3; i < 6; ++i) tail += oracle(i) * oracle(i);
  EXPECT_NEAR(frobenius_norm(m - truncated_svd(m, 3).reconstruct()), std::sqrt(tail), 1e-8);
}

TEST(TruncatedSvd, BoundsChecked) {
  const Matrix m = random_matrix(4, 3, 1);
  EXPECT_THROW(truncated_svd(m, 0), BoundsError);
  EXPECT_THROW(truncated_svd(m, 4), BoundsError);
}

TEST(TruncatedSvd, EckartYoungSpotCheck) {
  const Matrix m = random_matrix(12, 9, 77);
  for (std::size_t k : {1u, 3u, 5u}) {
    const double best = frobenius_norm(m - truncated_svd(m, k).reconstruct());
    for (std::uint64_t t = 0; t < 20; ++t) {
      const Matrix a = random_matrix(12, k, 1000 + t);
      // Best fit with column space span(a): project m onto it.
      const Matrix q = linalg::orthonormal_q(a);
      const double other = frobenius_norm(m - q * transpose_times(q, m));
      EXPECT_LE(best, other + 1e-12);
    }
  }
}

TEST(PivotedRowBasis, IdentityFullRank) {
  const auto rb = pivoted_row_basis(Matrix::identity(5), 1e-10);
  EXPECT_EQ(rb.indices.size(), 5u);
  const Matrix id = Matrix::identity(5);
  EXPECT_EQ(max_abs_diff(rb.coeffs * id.select_rows(rb.indices), id), 0.0);
}

TEST(PivotedRowBasis, DuplicateRowSelectedOnce) {
  const Matrix m{{1, 2, 3}, {4, 5, 6.5}, {1, 2, 3}};
  const auto rb = pivoted_row_basis(m);
  EXPECT_EQ(rb.indices.size(), 2u);
  const bool both_dups = std::count(rb.indices.begin(), rb.indices.end(), 0u) +
                             std::count(rb.indices.begin(), rb.indices.end(), 2u) >
                         1;
  EXPECT_FALSE(both_dups);
  EXPECT_LE(max_abs_diff(rb.coeffs * m.select_rows(rb.indices), m), 1e-12);
}

TEST(PivotedRowBasis, RankThreeProduct) {
  const Matrix m = random_matrix(8, 3, 21) * random_matrix(3, 8, 22);
  const auto rb = pivoted_row_basis(m);
  EXPECT_EQ(rb.indices.size(), 3u);
  EXPECT_LE(frobenius_norm(rb.coeffs * m.select_rows(rb.indices) - m), 1e-8);
}

TEST(PivotedRowBasis, ToleranceControlsError) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix m = random_matrix(15, 10, seed);
    for (double tol : {1e-1, 1e-3, 1e-9}) {
      const auto rb = pivoted_row_basis(m, tol);
      EXPECT_LE(frobenius_norm(rb.coeffs * m.select_rows(rb.indices) - m),
                tol * frobenius_norm(m) * (1 + 1e-9));
    }
  }
}

TEST(PseudoInverse, Examples) {
  EXPECT_LE(max_abs_diff(pseudo_inverse(Matrix::identity(4)), Matrix::identity(4)), 1e-14);
  const Matrix p = pseudo_inverse(Matrix{{2, 0}, {0, 0}});
  EXPECT_LE(max_abs_diff(p, Matrix{{0.5, 0}, {0, 0}}), 1e-15);
  const Matrix m = random_matrix(6, 3, 9);
  EXPECT_LE(max_abs_diff(pseudo_inverse(m) * m, Matrix::identity(3)), 1e-9);
}

TEST(PseudoInverse, PenroseIdentities) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix a = random_matrix(7, 3, seed) * random_matrix(3, 5, seed + 50);  // rank 3
    const Matrix p = pseudo_inverse(a);
    EXPECT_LE(max_abs_diff(a * p * a, a), 1e-8);
    EXPECT_LE(max_abs_diff(p * a * p, p), 1e-8);
    const Matrix ap = a * p;
    const Matrix pa = p * a;
    EXPECT_LE(max_abs_diff(ap, ap.transpose()), 1e-8);
    EXPECT_LE(max_abs_diff(pa, pa.transpose()), 1e-8);
  }
}

TEST(ProjectColumns, Examples) {
  const Matrix basis{{1, 0}, {0, 1}, {0, 0}};
  const Matrix h{{1}, {2}, {3}};
  EXPECT_EQ(project_columns(basis, h), (Matrix{{1}, {2}, {0}}));
  const Matrix in_span{{4, -1}, {0.5, 2}, {0, 0}};
  EXPECT_LE(max_abs_diff(project_columns(basis, in_span), in_span), 1e-10);
  EXPECT_THROW(project_columns(Matrix{{2, 0}, {0, 1}, {0, 0}}, h), ValidationError);
  EXPECT_THROW(project_columns(basis, Matrix(2, 1)), ValidationError);
}

TEST(ProjectColumns, OptimalAndIdempotent) {
  Rng rng(314);
  const Matrix basis = random_orthonormal(10, 4, rng);
  const Matrix h = gaussian_matrix(10, 6, rng);
  const Matrix p = project_columns(basis, h);
  EXPECT_LE(max_abs_diff(project_columns(basis, p), p), 1e-10);
  for (std::size_t c = 0; c < h.cols(); ++c) {
    const double own = distance(h.col(c), p.col(c));
    for (int t = 0; t < 100; ++t) {
      const Vector y = basis * std::span<const double>(gaussian_vector(4, rng));
      EXPECT_LE(own, distance(h.col(c), y) + 1e-12);
    }
  }
}

TEST(RangeBasis, PadsBeyondRowCount) {
  const Matrix m = random_matrix(3, 5, 2);
  const Matrix b = linalg::range_basis(m, 4);
  EXPECT_EQ(b.rows(), 3u);
  EXPECT_EQ(b.cols(), 4u);
  EXPECT_LE(linalg::orthonormality_defect(b.left_cols(3)), 1e-10);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(b(r, 3), 0.0);

  const Matrix tall = random_matrix(6, 2, 4);
  const Matrix tb = linalg::range_basis(tall, 4);
  EXPECT_LE(linalg::orthonormality_defect(tb), 1e-10);
  EXPECT_LE(max_abs_diff(tb * transpose_times(tb, tall), tall), 1e-10);
}

TEST(NumericalRank, DetectsStructuralRank) {
  const Matrix m = random_matrix(20, 4, 8) * random_matrix(4, 30, 9);
  EXPECT_EQ(linalg::numerical_rank(m), 4u);
}

}  // namespace
}  // namespace gtc
