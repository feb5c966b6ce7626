#include <gtest/gtest.h>

#include <random>

#include "controlcol/linalg.hpp"

using namespace controlcol;

namespace {

// Plain Gaussian elimination with partial pivoting; the oracle for LDLT.
std::vector<double> solve_ge(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

Matrix random_spd(std::mt19937_64& rng, int n, double ridge = 0.1) {
  std::normal_distribution<double> d;
  Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = d(rng);
  return a * a.transpose() + ridge * Matrix::Identity(n, n);
}

// Denman-Beavers iteration for the principal square root.
Matrix denman_beavers(const Matrix& a) {
  Matrix y = a;
  Matrix z = Matrix::Identity(a.rows(), a.cols());
  for (int i = 0; i < 100; ++i) {
    const Matrix yi = y.inverse();
    const Matrix zi = z.inverse();
    y = 0.5 * (y + zi);
    z = 0.5 * (z + yi);
  }
  return y;
}

}  // namespace

TEST(Linalg, PooledMahalanobisMatchesEliminationOracle) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> d;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = trial < 10 ? 5 : 36;
    const Matrix c1 = random_spd(rng, n), c2 = random_spd(rng, n);
    Vector m1(n), m2(n);
    for (int i = 0; i < n; ++i) {
      m1(i) = d(rng);
      m2(i) = d(rng);
    }
    std::vector<std::vector<double>> a(n, std::vector<double>(n));
    std::vector<double> diff(n);
    for (int i = 0; i < n; ++i) {
      diff[i] = m1(i) - m2(i);
      for (int j = 0; j < n; ++j) a[i][j] = 0.5 * (c1(i, j) + c2(i, j)) + (i == j ? kCovarianceEpsilon : 0.0);
    }
    const auto x = solve_ge(a, diff);
    double q = 0.0;
    for (int i = 0; i < n; ++i) q += diff[i] * x[i];
    EXPECT_NEAR(pooled_mahalanobis(m1, c1, m2, c2), std::sqrt(q), 1e-9 * std::max(1.0, std::sqrt(q)));
  }
}

TEST(Linalg, DiagonalClosedForm) {
  Vector m1(2), m2(2);
  m1 << 1.0, 2.0;
  m2 << 4.0, -2.0;
  Matrix c1 = Matrix::Zero(2, 2), c2 = Matrix::Zero(2, 2);
  c1.diagonal() << 2.0, 8.0;
  c2.diagonal() << 4.0, 2.0;
  const double expected = std::sqrt(9.0 / (3.0 + 1e-6) + 16.0 / (5.0 + 1e-6));
  EXPECT_NEAR(pooled_mahalanobis(m1, c1, m2, c2), expected, 1e-12);
  EXPECT_DOUBLE_EQ(pooled_mahalanobis(m1, c1, m2, c2), pooled_mahalanobis(m2, c2, m1, c1));
  EXPECT_EQ(pooled_mahalanobis(m1, c1, m1, c2), 0.0);
  EXPECT_THROW(pooled_mahalanobis(m1, c1, Vector::Zero(3), Matrix::Zero(3, 3)), DimensionMismatch);
}

TEST(Linalg, PsdSqrtAgainstOracles) {
  // 2x2 closed form: sqrt(M) = (M + s I) / t, s = sqrt(det), t = sqrt(tr + 2s)
  Matrix m(2, 2);
  m << 5.0, 2.0, 2.0, 3.0;
  const double s = std::sqrt(m.determinant());
  const Matrix closed = (m + s * Matrix::Identity(2, 2)) / std::sqrt(m.trace() + 2.0 * s);
  EXPECT_LT((psd_sqrt(m) - closed).cwiseAbs().maxCoeff(), 1e-12);

  std::mt19937_64 rng(22);
  for (int n : {3, 8, 20}) {
    const Matrix a = random_spd(rng, n, 0.5);
    const Matrix r = psd_sqrt(a);
    EXPECT_LT((r - denman_beavers(a)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((r * r - a).cwiseAbs().maxCoeff(), 1e-8);
  }
  Matrix neg = Matrix::Identity(2, 2);
  neg(1, 1) = -1.0;
  EXPECT_THROW(psd_sqrt(neg), NumericError);
}

TEST(Linalg, TraceSqrtProductAgainstDenmanBeavers) {
  std::mt19937_64 rng(23);
  for (int n : {2, 5, 12}) {
    const Matrix a = random_spd(rng, n, 0.5), b = random_spd(rng, n, 0.5);
    // AB is not symmetric but has positive real spectrum; DB converges.
    const double oracle = denman_beavers(a * b).trace();
    EXPECT_NEAR(trace_sqrt_product(a, b), oracle, 1e-8 * std::max(1.0, oracle));
    EXPECT_NEAR(trace_sqrt_product(a, b), trace_sqrt_product(b, a), 1e-8 * std::max(1.0, oracle));
  }
}

TEST(Linalg, SampleMoments) {
  std::vector<std::vector<double>> one{{1.0, 2.0}};
  const auto m1 = sample_moments(one);
  EXPECT_TRUE(m1.covariance.isZero(0.0));
  std::vector<std::vector<double>> two{{1.0, 2.0}, {3.0, 6.0}};
  const auto m2 = sample_moments(two);
  EXPECT_DOUBLE_EQ(m2.mean(0), 2.0);
  EXPECT_DOUBLE_EQ(m2.mean(1), 4.0);
  EXPECT_DOUBLE_EQ(m2.covariance(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(m2.covariance(0, 1), 4.0);
  EXPECT_DOUBLE_EQ(m2.covariance(1, 1), 8.0);
  std::vector<std::vector<double>> ragged{{1.0}, {1.0, 2.0}};
  EXPECT_THROW(sample_moments(ragged), DimensionMismatch);
}
