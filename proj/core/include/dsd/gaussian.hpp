#pragma once

#include <Eigen/Dense>

#include "dsd/rng.hpp"

namespace dsd {

/// Dense row-major matrix of 64-bit reals.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

namespace gauss {

/// Tolerance under which a factor counts as having orthonormal columns.
inline constexpr double kOrthonormalTol = 1e-10;

/// Zero-mean Gaussian N(0, spike * F F^T + floor * I).
///
/// The covariance is never densified on the common path; `dense_covariance`
/// exists for tests and small diagnostics.
struct LowRankGaussian {
  Mat factor;  // d x r
  double spike = 0.0;
  double floor = 0.0;

  LowRankGaussian() = default;
  LowRankGaussian(Mat f, double s, double c);

  Eigen::Index dim() const { return factor.rows(); }
  Eigen::Index rank() const { return factor.cols(); }

  bool has_orthonormal_factor(double tol = kOrthonormalTol) const;
  Mat dense_covariance() const;
};

/// Sigma^{-1} = floor_inv * I - correction * F F^T.
struct StructuredInverse {
  double floor_inv = 0.0;
  double correction = 0.0;

  /// Applies the inverse to x using the factor it was built from.
  Vec apply(const Mat& factor, const Eigen::Ref<const Vec>& x) const;
};

StructuredInverse structured_inverse(const LowRankGaussian& g);

/// Squared Wasserstein-2 distance between two zero-mean Gaussians whose
/// covariances commute. Eigenvalues are paired in the joint eigenbasis of the
/// two factor projectors.
double w2_commuting(const LowRankGaussian& a, const LowRankGaussian& b);

struct EigenDecomp {
  Vec values;   // descending
  Mat vectors;  // column i pairs with values(i)
};

/// Cyclic Jacobi eigensolver for symmetric matrices.
EigenDecomp symmetric_eigen(const Mat& a, double tol = 1e-12, int max_sweeps = 100);

/// Symmetric PSD square root; eigenvalues in [-clamp_tol, 0) are treated as 0.
Mat psd_sqrt(const Mat& a, double clamp_tol = 1e-10);

/// n x d matrix of draws x = sqrt(s) F z_r + sqrt(c) z_d.
Mat sample(const LowRankGaussian& g, Eigen::Index n, Rng& rng);

struct GaussianFit {
  Vec mean;
  Mat cov;
};

/// Sample mean and unbiased (n - 1) covariance of the rows of `samples`.
GaussianFit fit_gaussian(const Mat& samples);

/// Max-abs entry of F^T F - I.
double orthonormality_defect(const Mat& f);

}  // namespace gauss
}  // namespace dsd
