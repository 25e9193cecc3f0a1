#pragma once

#include "dsd/gaussian.hpp"
#include "dsd/rng.hpp"
#include "dsd/schedule.hpp"

namespace dsd::linear {

inline constexpr int kDefaultQuadPoints = 64;

/// Clean data p_X = N(0, E E^T) observed through additive N(0, sigma^2 I) noise.
struct LinearModel {
  Mat basis;  // E, d x r with orthonormal columns
  double sigma = 0.0;

  LinearModel() = default;
  LinearModel(Mat e, double noise);

  Eigen::Index dim() const { return basis.rows(); }
  Eigen::Index rank() const { return basis.cols(); }

  gauss::LowRankGaussian clean() const;
  gauss::LowRankGaussian noisy() const;
};

/// Random instance with a Haar-like orthonormal basis (QR of a Gaussian matrix).
LinearModel random_model(Eigen::Index d, Eigen::Index r, double sigma, Rng& rng);

/// Linear generator G(z) = U V^T z.
struct GeneratorParams {
  Mat u;  // d x r
  Mat v;  // d x r

  Mat gram() const { return v.transpose() * v; }
};

/// Throws ConstraintError unless |U^T U - I|_max <= 1e-8 and lambda_min(V^T V) > 0.
void require_feasible(const GeneratorParams& p);
bool is_feasible(const GeneratorParams& p);

/// Score of the noised data marginal: -(E E^T + (sigma^2 + sigma_t^2) I)^{-1} x.
Vec noisy_score(const LinearModel& m, double sigma_t, const Eigen::Ref<const Vec>& x);

/// Score of the noised generator marginal: -(U V^T V U^T + sigma_t^2 I)^{-1} x,
/// evaluated through the r x r Woodbury core (V^T V)^{-1} + sigma_t^{-2} U^T U.
Vec generator_score(const GeneratorParams& p, double sigma_t, const Eigen::Ref<const Vec>& x);

/// Schedule-averaged Fisher divergence between the generator and data scores,
/// computed from traces of the structured inverses with Gauss-Legendre
/// quadrature over t. Requires feasible parameters.
double loss_closed_form(const LinearModel& m, const GeneratorParams& p, const NoiseSchedule& s,
                        int quad_points = kDefaultQuadPoints);

/// Same integral without the feasibility check; defined for any full-rank U and
/// positive-definite V^T V. Finite-difference tests differentiate this one.
double loss_closed_form_unchecked(const LinearModel& m, const GeneratorParams& p,
                                  const NoiseSchedule& s, int quad_points = kDefaultQuadPoints);

/// Parameter-dependent part of the loss: the closed form minus the constant
/// C that does not depend on (U, V). Better conditioned for line searches.
double loss_variable_part(const LinearModel& m, const GeneratorParams& p, const NoiseSchedule& s,
                          int quad_points = kDefaultQuadPoints);

/// Integrand of the loss at a single noise level.
double loss_at_level(const LinearModel& m, const GeneratorParams& p, double sigma_t);

struct MonteCarloEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Direct estimator: t ~ Unif(0,1), x_t = U V^T z + sigma_t eps.
MonteCarloEstimate loss_monte_carlo(const LinearModel& m, const GeneratorParams& p,
                                    const NoiseSchedule& s, long n, Rng& rng);

/// U = E q, V = sqrt(1 + sigma^2) E q.
GeneratorParams analytic_minimizer(const LinearModel& m, const Mat& q);

struct WassersteinReport {
  double w2_noisy_clean = 0.0;
  double w2_distilled_clean = 0.0;
  double gap = 0.0;
};

/// Squared W2 of the noisy data and of the generator's output to the clean
/// distribution. Requires col(U) to coincide with or be orthogonal to col(E).
WassersteinReport wasserstein_report(const LinearModel& m, const GeneratorParams& p);

/// E_t[ u / (sigma^2 + sigma_t^2 + 1)^2 - u / (sigma_t^2 (u + sigma_t^2)) ].
double f_sigma(double u, double sigma, const NoiseSchedule& s, int quad_points = kDefaultQuadPoints);

/// tr(E E^T U Sigma U^T).
double pca_trace(const Mat& e, const Mat& sigma_rr, const Mat& u);

/// True when U attains the maximum tr(Sigma) of pca_trace over the Stiefel manifold.
bool trace_maximizer_check(const Mat& e, const Mat& sigma_rr, const Mat& u);

/// Principal angles (radians, ascending) between col(A) and col(B); both
/// inputs must have orthonormal columns.
Vec principal_angles(const Mat& a, const Mat& b);

/// Per-level coefficients of the reduced loss.
struct LevelCoefficients {
  double beta2 = 0.0;  // sigma^2 + sigma_t^2
  double floor_inv = 0.0;  // 1 / beta^2
  double gamma = 0.0;  // 1 / (beta^2 (beta^2 + 1))
};
LevelCoefficients level_coefficients(double sigma, double sigma_t);

}  // namespace dsd::linear
