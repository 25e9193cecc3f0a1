#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dsd/errors.hpp"
#include "dsd/linear_theory.hpp"

namespace dsd::stiefel {

enum class Retraction { QR, Polar };

struct OptConfig {
  double step_size = 1.0;  // initial trial step of the line search
  long max_iters = 5000;
  double grad_tol = 1e-7;
  Retraction retraction = Retraction::QR;
  std::uint64_t seed = 0;
  int quad_points = linear::kDefaultQuadPoints;
  double armijo_c1 = 1e-4;
  double min_step = 1e-14;
  bool block_steps = true;  // alternate U and V steps with separate step sizes
};

struct TraceRecord {
  long iter = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double angle_max = 0.0;
  double vtv_dev = 0.0;
};

struct OptTrace {
  std::vector<TraceRecord> records;

  /// CSV with columns iter,loss,grad_norm,angle_max,vtv_dev.
  void write_csv(std::ostream& os) const;
};

/// Line search could not find an acceptable step above the underflow limit.
class StalledOptimization : public Error {
 public:
  StalledOptimization(const std::string& what, OptTrace trace)
      : Error(what), trace_(std::move(trace)) {}
  const OptTrace& trace() const noexcept { return trace_; }

 private:
  OptTrace trace_;
};

struct Gradient {
  Mat du;
  Mat dv;
};

/// Gradient of loss_closed_form_unchecked with respect to (U, V).
Gradient euclidean_gradient(const linear::LinearModel& m, const linear::GeneratorParams& p,
                            const NoiseSchedule& s, int quad_points = linear::kDefaultQuadPoints);

/// Projection of dU onto the tangent space of the Stiefel manifold at U.
Mat tangent_project(const Mat& u, const Mat& du);

/// Riemannian gradient: (projected dU, dV).
Gradient riemannian_gradient(const Mat& u, const Gradient& g);

double gradient_norm(const Gradient& g);

/// Maps U + step * direction back to the manifold. A zero step or a zero
/// direction returns U unchanged.
Mat retract(const Mat& u, const Mat& direction, double step, Retraction kind);

struct StepResult {
  linear::GeneratorParams params;
  double loss = 0.0;
  double step = 0.0;  // accepted step size; 0 when the gradient vanished
};

/// One Armijo-backtracked descent step along the negative Riemannian gradient.
/// Steps that would push lambda_min(V^T V) below 1e-10 are rejected.
/// Throws StalledOptimization if the step size underflows `cfg.min_step`.
StepResult riemannian_step(const linear::LinearModel& m, const linear::GeneratorParams& p,
                           const NoiseSchedule& s, const Gradient& grads, const OptConfig& cfg,
                           double trial_step, double current_loss);

struct OptResult {
  linear::GeneratorParams params;
  OptTrace trace;
  bool converged = false;  // reached the minimizer family within 1e-3
  bool grad_tol_met = false;
  bool stalled = false;  // line search ran out of representable decrease
  long iterations = 0;
};

/// Largest principal angle between col(U) and col(E).
double max_principal_angle(const linear::LinearModel& m, const Mat& u);

/// |V^T V - (1 + sigma^2) I|_F.
double gram_deviation(const linear::LinearModel& m, const Mat& v);

OptResult optimize(const linear::LinearModel& m, const linear::GeneratorParams& p0,
                   const NoiseSchedule& s, const OptConfig& cfg);

/// U from the QR factor of a seeded Gaussian d x r matrix, V = U.
linear::GeneratorParams random_init(Eigen::Index d, Eigen::Index r, Rng& rng);

}  // namespace dsd::stiefel
