#include "dsd/linear_theory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "dsd/errors.hpp"
#include "dsd/quadrature.hpp"

namespace dsd::linear {

namespace {

Mat identity(Eigen::Index n) { return Mat::Identity(n, n); }

void require_quad_points(int quad_points) {
  if (quad_points < 8) {
    throw PreconditionError("loss quadrature needs at least 8 nodes");
  }
}

void require_same_shape(const LinearModel& m, const GeneratorParams& p) {
  if (p.u.rows() != m.dim() || p.v.rows() != m.dim() || p.u.cols() != m.rank() ||
      p.v.cols() != m.rank()) {
    throw PreconditionError("generator parameters do not match the model dimensions");
  }
}

}  // namespace

LinearModel::LinearModel(Mat e, double noise) : basis(std::move(e)), sigma(noise) {
  if (basis.cols() < 1 || basis.cols() >= basis.rows()) {
    throw PreconditionError("LinearModel: need 1 <= r < d");
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw PreconditionError("LinearModel: sigma must be finite and nonnegative");
  }
  if (gauss::orthonormality_defect(basis) > gauss::kOrthonormalTol) {
    throw PreconditionError("LinearModel: basis E must have orthonormal columns");
  }
}

gauss::LowRankGaussian LinearModel::clean() const { return {basis, 1.0, 0.0}; }

gauss::LowRankGaussian LinearModel::noisy() const { return {basis, 1.0, sigma * sigma}; }

LinearModel random_model(Eigen::Index d, Eigen::Index r, double sigma, Rng& rng) {
  Mat g(d, r);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < r; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(d, r);
  return {q, sigma};
}

bool is_feasible(const GeneratorParams& p) {
  if (p.u.rows() != p.v.rows() || p.u.cols() != p.v.cols()) return false;
  if (gauss::orthonormality_defect(p.u) > 1e-8) return false;
  const gauss::EigenDecomp eig = gauss::symmetric_eigen(p.gram());
  return eig.values(eig.values.size() - 1) > 0.0;
}

void require_feasible(const GeneratorParams& p) {
  if (p.u.rows() != p.v.rows() || p.u.cols() != p.v.cols()) {
    throw ConstraintError("generator parameters: U and V must have the same shape");
  }
  const double defect = gauss::orthonormality_defect(p.u);
  if (defect > 1e-8) {
    std::ostringstream msg;
    msg << "generator parameters: U^T U deviates from I by " << defect;
    throw ConstraintError(msg.str());
  }
  const gauss::EigenDecomp eig = gauss::symmetric_eigen(p.gram());
  if (!(eig.values(eig.values.size() - 1) > 0.0)) {
    throw ConstraintError("generator parameters: V^T V is not positive definite");
  }
}

LevelCoefficients level_coefficients(double sigma, double sigma_t) {
  LevelCoefficients c;
  c.beta2 = sigma * sigma + sigma_t * sigma_t;
  c.floor_inv = 1.0 / c.beta2;
  c.gamma = 1.0 / (c.beta2 * (c.beta2 + 1.0));
  return c;
}

Vec noisy_score(const LinearModel& m, double sigma_t, const Eigen::Ref<const Vec>& x) {
  const double floor = m.sigma * m.sigma + sigma_t * sigma_t;
  if (!(floor > 0.0)) {
    throw DomainError("noisy_score: sigma^2 + sigma_t^2 must be positive");
  }
  if (x.size() != m.dim()) {
    throw PreconditionError("noisy_score: dimension mismatch");
  }
  const gauss::StructuredInverse inv = gauss::structured_inverse({m.basis, 1.0, floor});
  return -inv.apply(m.basis, x);
}

Vec generator_score(const GeneratorParams& p, double sigma_t, const Eigen::Ref<const Vec>& x) {
  if (!(sigma_t > 0.0)) {
    throw DomainError("generator_score: sigma_t must be positive");
  }
  if (x.size() != p.u.rows()) {
    throw PreconditionError("generator_score: dimension mismatch");
  }
  const Mat gram = p.gram();
  Eigen::LLT<Mat> gram_llt(gram);
  if (gram_llt.info() != Eigen::Success) {
    throw PreconditionError("generator_score: V^T V is singular");
  }
  const double s = sigma_t * sigma_t;
  const Eigen::Index r = gram.rows();
  const Mat core = gram_llt.solve(identity(r)) + (p.u.transpose() * p.u) / s;
  const Vec proj = p.u.transpose() * x;
  const Vec inner = core.ldlt().solve(proj);
  return -(x / s - (p.u * inner) / (s * s));
}

namespace {

struct LevelTerms {
  double constant = 0.0;
  double variable = 0.0;
};

LevelTerms level_terms(const LinearModel& m, const GeneratorParams& p, double sigma_t) {
  const auto d = static_cast<double>(m.dim());
  const auto r = static_cast<double>(m.rank());
  const Eigen::Index rr = m.rank();
  const double s = sigma_t * sigma_t;
  const LevelCoefficients c = level_coefficients(m.sigma, sigma_t);
  const double a = c.floor_inv;
  const double g = c.gamma;
  const double k = g * g - 2.0 * a * g;

  const Mat gram = p.gram();                       // M
  const Mat uu = p.u.transpose() * p.u;            // K
  const Mat eu = m.basis.transpose() * p.u;        // E^T U
  const Mat proj = eu.transpose() * eu;            // U^T E E^T U

  // tr(Sigma_sigma^{-2} Sigma_theta) - 2 tr(Sigma_sigma^{-1}) + tr(Sigma_theta^{-1}), with
  // tr(Sigma_theta^{-1}) = (d - r)/s + tr((K M + s I)^{-1}).
  const Mat shifted = uu * gram + s * identity(rr);
  LevelTerms out;
  out.variable = a * a * (gram * uu).trace() + k * (gram * proj).trace() +
                 shifted.partialPivLu().inverse().trace();
  out.constant = a * a * d * s + k * r * s - 2.0 * (a * d - g * r) + (d - r) / s;
  return out;
}

}  // namespace

double loss_at_level(const LinearModel& m, const GeneratorParams& p, double sigma_t) {
  const LevelTerms t = level_terms(m, p, sigma_t);
  return t.constant + t.variable;
}

double loss_variable_part(const LinearModel& m, const GeneratorParams& p, const NoiseSchedule& s,
                          int quad_points) {
  require_quad_points(quad_points);
  require_same_shape(m, p);
  s.validate();
  const QuadratureRule rule = gauss_legendre_unit(quad_points);
  std::vector<double> terms(rule.nodes.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    terms[i] = rule.weights[i] * level_terms(m, p, s.sigma(rule.nodes[i])).variable;
  }
  return pairwise_sum(terms);
}

double loss_closed_form_unchecked(const LinearModel& m, const GeneratorParams& p,
                                  const NoiseSchedule& s, int quad_points) {
  require_quad_points(quad_points);
  require_same_shape(m, p);
  s.validate();
  const QuadratureRule rule = gauss_legendre_unit(quad_points);
  std::vector<double> terms(rule.nodes.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    terms[i] = rule.weights[i] * loss_at_level(m, p, s.sigma(rule.nodes[i]));
  }
  return pairwise_sum(terms);
}

double loss_closed_form(const LinearModel& m, const GeneratorParams& p, const NoiseSchedule& s,
                        int quad_points) {
  require_same_shape(m, p);
  require_feasible(p);
  return loss_closed_form_unchecked(m, p, s, quad_points);
}

MonteCarloEstimate loss_monte_carlo(const LinearModel& m, const GeneratorParams& p,
                                    const NoiseSchedule& s, long n, Rng& rng) {
  if (n < 100) {
    throw PreconditionError("loss_monte_carlo: need n >= 100");
  }
  require_same_shape(m, p);
  s.validate();
  const Eigen::Index d = m.dim();
  std::vector<double> values(static_cast<std::size_t>(n));
  Vec z(d);
  Vec eps(d);
  for (long i = 0; i < n; ++i) {
    const double sigma_t = s.sample_sigma(rng);
    for (Eigen::Index j = 0; j < d; ++j) z(j) = rng.normal();
    for (Eigen::Index j = 0; j < d; ++j) eps(j) = rng.normal();
    const Vec x = p.u * (p.v.transpose() * z) + sigma_t * eps;
    const Vec diff = noisy_score(m, sigma_t, x) - generator_score(p, sigma_t, x);
    values[static_cast<std::size_t>(i)] = diff.squaredNorm();
  }
  const double mean = pairwise_sum(values) / static_cast<double>(n);
  std::vector<double> sq(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) sq[i] = (values[i] - mean) * (values[i] - mean);
  const double var = pairwise_sum(sq) / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

GeneratorParams analytic_minimizer(const LinearModel& m, const Mat& q) {
  if (q.rows() != m.rank() || q.cols() != m.rank()) {
    throw PreconditionError("analytic_minimizer: q must be r x r");
  }
  if (gauss::orthonormality_defect(q) > 1e-10) {
    throw PreconditionError("analytic_minimizer: q is not orthogonal");
  }
  GeneratorParams p;
  p.u = m.basis * q;
  p.v = std::sqrt(1.0 + m.sigma * m.sigma) * p.u;
  return p;
}

Vec principal_angles(const Mat& a, const Mat& b) {
  const Mat cross = a.transpose() * b;
  const gauss::EigenDecomp cos2 = gauss::symmetric_eigen(cross.transpose() * cross);  // descending
  const Mat residual = b - a * cross;
  const gauss::EigenDecomp sin2 = gauss::symmetric_eigen(residual.transpose() * residual);
  const Eigen::Index n = cos2.values.size();
  Vec angles(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double c = std::sqrt(std::clamp(cos2.values(i), 0.0, 1.0));
    const double sn = std::sqrt(std::clamp(sin2.values(n - 1 - i), 0.0, 1.0));
    angles(i) = std::atan2(sn, c);
  }
  return angles;
}

WassersteinReport wasserstein_report(const LinearModel& m, const GeneratorParams& p) {
  require_same_shape(m, p);
  if (gauss::orthonormality_defect(p.u) > 1e-8) {
    throw ConstraintError("wasserstein_report: U must have orthonormal columns");
  }
  WassersteinReport out;
  out.w2_noisy_clean = gauss::w2_commuting(m.noisy(), m.clean());

  const Vec angles = principal_angles(m.basis, p.u);
  const double tol = 1e-6;
  const Mat gram = p.gram();
  if (angles.maxCoeff() <= tol) {
    // Covariance lives in col(E); pair its eigenvalues with the unit clean ones.
    const Mat rot = m.basis.transpose() * p.u;
    const Mat inner = rot * gram * rot.transpose();
    const gauss::EigenDecomp eig = gauss::symmetric_eigen(0.5 * (inner + inner.transpose()));
    double total = 0.0;
    for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
      const double lam = std::max(eig.values(i), 0.0);
      total += lam + 1.0 - 2.0 * std::sqrt(lam);
    }
    out.w2_distilled_clean = total;
  } else if (angles.minCoeff() >= std::numbers::pi / 2 - tol) {
    out.w2_distilled_clean = gram.trace() + static_cast<double>(m.rank());
  } else {
    std::ostringstream msg;
    msg << "wasserstein_report: generator covariance does not commute with E E^T "
        << "(principal angles in [" << angles.minCoeff() << ", " << angles.maxCoeff()
        << "] rad are neither all ~0 nor all ~pi/2)";
    throw DomainError(msg.str());
  }
  out.gap = out.w2_noisy_clean - out.w2_distilled_clean;
  return out;
}

double f_sigma(double u, double sigma, const NoiseSchedule& s, int quad_points) {
  if (!(u > 0.0)) {
    throw DomainError("f_sigma: u must be positive");
  }
  s.validate();
  const QuadratureRule rule = gauss_legendre_unit(quad_points);
  std::vector<double> terms(rule.nodes.size());
  const double sigma2 = sigma * sigma;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double st = s.sigma(rule.nodes[i]);
    const double st2 = st * st;
    const double denom = sigma2 + st2 + 1.0;
    terms[i] = rule.weights[i] * (u / (denom * denom) - u / (st2 * (u + st2)));
  }
  return pairwise_sum(terms);
}

double pca_trace(const Mat& e, const Mat& sigma_rr, const Mat& u) {
  const Mat w = e.transpose() * u;
  return (w * sigma_rr * w.transpose()).trace();
}

bool trace_maximizer_check(const Mat& e, const Mat& sigma_rr, const Mat& u) {
  const double value = pca_trace(e, sigma_rr, u);
  const Mat w = e.transpose() * u;
  const double defect = (w * w.transpose() - identity(w.rows())).cwiseAbs().maxCoeff();
  return value >= sigma_rr.trace() - 1e-8 && defect <= 1e-6;
}

}  // namespace dsd::linear
