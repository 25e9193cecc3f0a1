#pragma once

#include <functional>

#include "dsd/gaussian.hpp"
#include "dsd/rng.hpp"

namespace test {

using dsd::Mat;
using dsd::Vec;

/// Orthonormal d x r frame from the QR factor of a Gaussian matrix.
inline Mat random_frame(Eigen::Index d, Eigen::Index r, dsd::Rng& rng) {
  Mat g(d, r);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<Mat> qr(g);
  return qr.householderQ() * Mat::Identity(d, r);
}

inline Mat random_orthogonal(Eigen::Index r, dsd::Rng& rng) { return random_frame(r, r, rng); }

/// Generic Bures distance through Eigen's own eigensolver, independent of the
/// library's Jacobi routine.
inline Mat sqrtm_oracle(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  Eigen::VectorXd v = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const double top = es.eigenvalues().cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (es.eigenvalues()(i) <= 1e-13 * top) v(i) = 0.0;
  }
  return es.eigenvectors() * v.asDiagonal() * es.eigenvectors().transpose();
}

inline double bures_oracle(const Mat& a, const Mat& b) {
  const Mat ra = sqrtm_oracle(a);
  const Mat inner = ra * b * ra;
  return a.trace() + b.trace() - 2.0 * sqrtm_oracle(0.5 * (inner + inner.transpose())).trace();
}

/// Central difference of f along every coordinate of x.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, Vec x, double h) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xi = x(i);
    x(i) = xi + h;
    const double fp = f(x);
    x(i) = xi - h;
    const double fm = f(x);
    x(i) = xi;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|b|_inf, floor).
inline double rel_error(const Vec& a, const Vec& b, double floor = 1e-12) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), floor);
}

}  // namespace test
