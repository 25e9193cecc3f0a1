#include "dsd/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

#include "dsd/errors.hpp"

namespace dsd::gauss {

namespace {

void validate(const LowRankGaussian& g) {
  if (g.factor.rows() < g.factor.cols() || g.factor.cols() < 1) {
    throw PreconditionError("LowRankGaussian: factor must be d x r with d >= r >= 1");
  }
  if (!(g.spike >= 0.0) || !(g.floor >= 0.0) || !(g.spike + g.floor > 0.0)) {
    throw PreconditionError("LowRankGaussian: need spike >= 0, floor >= 0, spike + floor > 0");
  }
  if (!g.factor.allFinite()) {
    throw PreconditionError("LowRankGaussian: factor has non-finite entries");
  }
}

// (sqrt(x) - sqrt(y))^2, written as in the W2 formula for paired eigenvalues.
double paired_term(double x, double y) {
  return x + y - 2.0 * std::sqrt(x * y);
}

}  // namespace

LowRankGaussian::LowRankGaussian(Mat f, double s, double c)
    : factor(std::move(f)), spike(s), floor(c) {
  validate(*this);
}

double orthonormality_defect(const Mat& f) {
  const Mat gram = f.transpose() * f;
  return (gram - Mat::Identity(f.cols(), f.cols())).cwiseAbs().maxCoeff();
}

bool LowRankGaussian::has_orthonormal_factor(double tol) const {
  return orthonormality_defect(factor) <= tol;
}

Mat LowRankGaussian::dense_covariance() const {
  Mat cov = spike * factor * factor.transpose();
  cov.diagonal().array() += floor;
  return cov;
}

Vec StructuredInverse::apply(const Mat& factor, const Eigen::Ref<const Vec>& x) const {
  const Vec proj = factor.transpose() * x;
  return floor_inv * x - correction * (factor * proj);
}

StructuredInverse structured_inverse(const LowRankGaussian& g) {
  validate(g);
  if (g.floor <= 0.0) {
    throw SingularCovarianceError("structured_inverse: isotropic floor is zero, covariance is singular");
  }
  if (!g.has_orthonormal_factor()) {
    throw PreconditionError("structured_inverse: factor columns are not orthonormal");
  }
  const double c = g.floor;
  const double s = g.spike;
  return {1.0 / c, s / (c * (c + s))};
}

double w2_commuting(const LowRankGaussian& a, const LowRankGaussian& b) {
  validate(a);
  validate(b);
  if (a.dim() != b.dim()) {
    throw PreconditionError("w2_commuting: dimension mismatch");
  }
  const bool a_spiked = a.spike > 0.0;
  const bool b_spiked = b.spike > 0.0;
  if ((a_spiked && !a.has_orthonormal_factor()) || (b_spiked && !b.has_orthonormal_factor())) {
    throw PreconditionError("w2_commuting: spiked factors must have orthonormal columns");
  }

  const Eigen::Index d = a.dim();
  const Eigen::Index ra = a.rank();
  const Eigen::Index rb = b.rank();

  // Joint eigenspaces of the two projectors: k = dim(col(F) ∩ col(G)).
  Eigen::Index shared = 0;
  if (a_spiked && b_spiked) {
    const Mat cross = a.factor.transpose() * b.factor;  // ra x rb
    const Mat commutator = a.factor * cross * b.factor.transpose() -
                           b.factor * cross.transpose() * a.factor.transpose();
    const double defect = a.spike * b.spike * commutator.cwiseAbs().maxCoeff();
    if (defect > 1e-8) {
      std::ostringstream msg;
      msg << "w2_commuting: covariances do not commute (|AB - BA|_max = " << defect << ")";
      throw DomainError(msg.str());
    }
    const EigenDecomp cosines = symmetric_eigen(cross.transpose() * cross);
    for (Eigen::Index i = 0; i < cosines.values.size(); ++i) {
      if (cosines.values(i) > 0.5) ++shared;
    }
  }

  const double top_a = a.spike + a.floor;
  const double top_b = b.spike + b.floor;
  const auto n_ab = static_cast<double>(shared);
  const auto n_a = static_cast<double>((a_spiked ? ra : 0) - shared);
  const auto n_b = static_cast<double>((b_spiked ? rb : 0) - shared);
  const double n_rest = static_cast<double>(d) - n_ab - n_a - n_b;

  const double total = n_ab * paired_term(top_a, top_b) + n_a * paired_term(top_a, b.floor) +
                       n_b * paired_term(a.floor, top_b) + n_rest * paired_term(a.floor, b.floor);
  return std::max(total, 0.0);
}

EigenDecomp symmetric_eigen(const Mat& input, double tol, int max_sweeps) {
  const Eigen::Index n = input.rows();
  if (n != input.cols()) {
    throw PreconditionError("symmetric_eigen: matrix is not square");
  }
  if (!input.allFinite()) {
    throw PreconditionError("symmetric_eigen: non-finite entries");
  }
  const double scale = std::max(1.0, input.cwiseAbs().maxCoeff());
  if ((input - input.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw PreconditionError("symmetric_eigen: matrix is not symmetric");
  }

  Eigen::MatrixXd a = 0.5 * (input + input.transpose());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double frob = a.norm();

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
    }
    if (std::sqrt(off) <= tol * frob || off == 0.0) break;

    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

  EigenDecomp out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto src = order[static_cast<std::size_t>(i)];
    out.values(i) = a(src, src);
    out.vectors.col(i) = v.col(src);
  }
  return out;
}

Mat psd_sqrt(const Mat& a, double clamp_tol) {
  EigenDecomp eig = symmetric_eigen(a);
  const double scale = std::max(1.0, std::abs(eig.values.size() ? eig.values(0) : 0.0));
  // Eigenvalues at the solver's roundoff level are exact zeros of a singular
  // input; their square roots would otherwise leak O(sqrt(eps)) into traces.
  const double top = eig.values.size() ? eig.values.cwiseAbs().maxCoeff() : 0.0;
  const double roundoff = 16.0 * static_cast<double>(eig.values.size()) * std::numeric_limits<double>::epsilon() * top;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    double& lam = eig.values(i);
    if (std::abs(lam) <= roundoff) {
      lam = 0.0;
    } else if (lam < 0.0) {
      if (lam < -clamp_tol * scale) {
        std::ostringstream msg;
        msg << "psd_sqrt: matrix is indefinite (eigenvalue " << lam << ")";
        throw DomainError(msg.str());
      }
      lam = 0.0;
    }
    lam = std::sqrt(lam);
  }
  Mat root = eig.vectors * eig.values.asDiagonal() * eig.vectors.transpose();
  return 0.5 * (root + root.transpose());
}

Mat sample(const LowRankGaussian& g, Eigen::Index n, Rng& rng) {
  validate(g);
  if (n < 1) {
    throw PreconditionError("sample: n must be >= 1");
  }
  const Eigen::Index d = g.dim();
  const Eigen::Index r = g.rank();
  const double root_spike = std::sqrt(g.spike);
  const double root_floor = std::sqrt(g.floor);
  Mat out(n, d);
  Vec zr(r);
  Vec zd(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < r; ++j) zr(j) = rng.normal();
    for (Eigen::Index j = 0; j < d; ++j) zd(j) = rng.normal();
    Vec x = root_spike * (g.factor * zr);
    if (g.floor > 0.0) x += root_floor * zd;
    out.row(i) = x.transpose();
  }
  return out;
}

GaussianFit fit_gaussian(const Mat& samples) {
  const Eigen::Index n = samples.rows();
  if (n < 2) {
    throw InsufficientDataError("fit_gaussian: need at least two samples");
  }
  GaussianFit fit;
  fit.mean = samples.colwise().mean().transpose();
  const Mat centered = samples.rowwise() - fit.mean.transpose();
  fit.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  fit.cov = 0.5 * (fit.cov + fit.cov.transpose()).eval();
  return fit;
}

}  // namespace dsd::gauss
