#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

#include "controlcol/error.hpp"

namespace controlcol {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Diagonal loading applied before any covariance inversion or square root.
inline constexpr double kCovarianceEpsilon = 1e-6;

inline Vector to_vector(std::span<const double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline bool is_symmetric(const Matrix& m, double tol = 1e-9) {
  return m.rows() == m.cols() && (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

struct SampleMoments {
  Vector mean;
  Matrix covariance;  // unbiased; zero for a single sample
};

inline SampleMoments sample_moments(std::span<const std::vector<double>> samples) {
  if (samples.empty()) throw InvalidArgument("no samples");
  const auto dim = static_cast<Eigen::Index>(samples.front().size());
  Vector mean = Vector::Zero(dim);
  for (const auto& s : samples) {
    if (static_cast<Eigen::Index>(s.size()) != dim) throw DimensionMismatch("samples differ in dimension");
    mean += to_vector(s);
  }
  mean /= static_cast<double>(samples.size());
  Matrix cov = Matrix::Zero(dim, dim);
  if (samples.size() > 1) {
    for (const auto& s : samples) {
      const Vector d = to_vector(s) - mean;
      cov.noalias() += d * d.transpose();
    }
    cov /= static_cast<double>(samples.size() - 1);
  }
  return {std::move(mean), 0.5 * (cov + cov.transpose())};
}

// sqrt((m1-m2)^T ((c1+c2)/2 + eps I)^-1 (m1-m2))
inline double pooled_mahalanobis(const Vector& m1, const Matrix& c1, const Vector& m2, const Matrix& c2,
                                 double eps = kCovarianceEpsilon) {
  if (m1.size() != m2.size() || c1.rows() != m1.size() || c2.rows() != m2.size()) {
    throw DimensionMismatch("feature dimension mismatch: " + std::to_string(m1.size()) + " vs " +
                            std::to_string(m2.size()));
  }
  const Vector d = m1 - m2;
  if (d.isZero(0.0)) return 0.0;
  Matrix pooled = 0.5 * (c1 + c2);
  pooled.diagonal().array() += eps;
  const Eigen::LDLT<Matrix> ldlt(pooled);
  if (ldlt.info() != Eigen::Success) throw NumericError("pooled covariance factorization failed");
  const double q = d.dot(ldlt.solve(d));
  return std::sqrt(std::max(q, 0.0));
}

// Symmetric PSD square root; eigenvalues in (-tol, 0) are treated as zero.
inline Matrix psd_sqrt(const Matrix& m, double tol = 1e-6) {
  const Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition did not converge");
  Vector ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol) throw NumericError("matrix is not positive semidefinite");
    ev(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Tr((A B)^{1/2}) for symmetric PSD A, B. The eigenvalues of A^{1/2} B A^{1/2}
// are the squared singular values of B^{1/2} A^{1/2}, so the trace is the sum
// of those singular values. Going through the SVD avoids squaring the
// spectrum, which otherwise costs half the significant digits of the small
// eigenvalues (identical inputs would not give an exact-looking zero).
inline double trace_sqrt_product(const Matrix& a, const Matrix& b, double tol = 1e-6) {
  const Matrix m = psd_sqrt(b, tol) * psd_sqrt(a, tol);
  const Eigen::JacobiSVD<Matrix> svd(m);
  if (svd.info() != Eigen::Success) throw NumericError("matrix square root did not converge");
  return svd.singularValues().sum();
}

}  // namespace controlcol
