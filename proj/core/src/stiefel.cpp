#include "dsd/stiefel.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "dsd/quadrature.hpp"

namespace dsd::stiefel {

using linear::GeneratorParams;
using linear::LinearModel;

namespace {

Mat sym(const Mat& a) { return 0.5 * (a + a.transpose()); }

Mat thin_qr_positive(const Mat& x) {
  const Eigen::Index d = x.rows();
  const Eigen::Index r = x.cols();
  Eigen::HouseholderQR<Mat> qr(x);
  Mat q = qr.householderQ() * Mat::Identity(d, r);
  const Mat rr = qr.matrixQR().topLeftCorner(r, r);
  for (Eigen::Index j = 0; j < r; ++j) {
    if (rr(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return q;
}

double min_gram_eigenvalue(const Mat& v) {
  const gauss::EigenDecomp eig = gauss::symmetric_eigen(sym(v.transpose() * v));
  return eig.values(eig.values.size() - 1);
}

}  // namespace

void OptTrace::write_csv(std::ostream& os) const {
  os << "iter,loss,grad_norm,angle_max,vtv_dev\n";
  os.precision(17);
  for (const TraceRecord& rec : records) {
    os << rec.iter << ',' << rec.loss << ',' << rec.grad_norm << ',' << rec.angle_max << ','
       << rec.vtv_dev << '\n';
  }
}

Gradient euclidean_gradient(const LinearModel& m, const GeneratorParams& p, const NoiseSchedule& s,
                            int quad_points) {
  s.validate();
  const Eigen::Index r = m.rank();
  const Mat gram = p.gram();
  const Mat uu = p.u.transpose() * p.u;
  const Mat eu = m.basis.transpose() * p.u;
  const Mat proj = eu.transpose() * eu;
  const Mat pu = m.basis * eu;  // E E^T U
  const Mat eye = Mat::Identity(r, r);

  Mat du = Mat::Zero(p.u.rows(), r);
  Mat dgram = Mat::Zero(r, r);
  const QuadratureRule rule = gauss_legendre_unit(quad_points);
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double w = rule.weights[i];
    const double st = s.sigma(rule.nodes[i]);
    const double ss = st * st;
    const linear::LevelCoefficients c = linear::level_coefficients(m.sigma, st);
    const double a2 = c.floor_inv * c.floor_inv;
    const double k = c.gamma * c.gamma - 2.0 * c.floor_inv * c.gamma;

    const Mat right_inv = (gram * uu + ss * eye).partialPivLu().inverse();  // (M K + sI)^{-1}
    const Mat left_inv = (uu * gram + ss * eye).partialPivLu().inverse();   // (K M + sI)^{-1}

    du += w * (2.0 * a2 * p.u * gram + 2.0 * k * pu * gram -
               2.0 * p.u * right_inv * right_inv * gram);
    dgram += w * (a2 * uu + k * proj - left_inv * uu * right_inv);
  }
  return {du, p.v * (dgram + dgram.transpose())};
}

Mat tangent_project(const Mat& u, const Mat& du) { return du - u * sym(u.transpose() * du); }

Gradient riemannian_gradient(const Mat& u, const Gradient& g) {
  return {tangent_project(u, g.du), g.dv};
}

double gradient_norm(const Gradient& g) {
  return std::sqrt(g.du.squaredNorm() + g.dv.squaredNorm());
}

Mat retract(const Mat& u, const Mat& direction, double step, Retraction kind) {
  if (step == 0.0 || direction.isZero(0.0)) return u;
  const Mat x = u + step * direction;
  if (kind == Retraction::QR) return thin_qr_positive(x);
  const gauss::EigenDecomp eig = gauss::symmetric_eigen(sym(x.transpose() * x));
  Vec inv_root = eig.values.array().rsqrt();
  return x * (eig.vectors * inv_root.asDiagonal() * eig.vectors.transpose());
}

StepResult riemannian_step(const LinearModel& m, const GeneratorParams& p, const NoiseSchedule& s,
                           const Gradient& grads, const OptConfig& cfg, double trial_step,
                           double current_loss) {
  const Gradient rg = riemannian_gradient(p.u, grads);
  const double norm2 = rg.du.squaredNorm() + rg.dv.squaredNorm();
  if (norm2 == 0.0) return {p, current_loss, 0.0};

  double step = trial_step;
  while (step >= cfg.min_step) {
    GeneratorParams next;
    next.u = retract(p.u, -rg.du, step, cfg.retraction);
    next.v = p.v - step * rg.dv;
    if (min_gram_eigenvalue(next.v) >= 1e-10) {
      const double loss = linear::loss_variable_part(m, next, s, cfg.quad_points);
      if (std::isfinite(loss) && loss <= current_loss - cfg.armijo_c1 * step * norm2) {
        return {std::move(next), loss, step};
      }
    }
    step *= 0.5;
  }
  std::ostringstream msg;
  msg << "riemannian_step: step size underflow below " << cfg.min_step
      << " (gradient norm " << std::sqrt(norm2) << ")";
  throw StalledOptimization(msg.str(), OptTrace{});
}

double max_principal_angle(const LinearModel& m, const Mat& u) {
  return linear::principal_angles(m.basis, u).maxCoeff();
}

double gram_deviation(const LinearModel& m, const Mat& v) {
  const Eigen::Index r = v.cols();
  const Mat target = (1.0 + m.sigma * m.sigma) * Mat::Identity(r, r);
  return (v.transpose() * v - target).norm();
}

OptResult optimize(const LinearModel& m, const GeneratorParams& p0, const NoiseSchedule& s,
                   const OptConfig& cfg) {
  if (!(cfg.step_size > 0.0) || !(cfg.grad_tol > 0.0)) {
    throw PreconditionError("optimize: step_size and grad_tol must be positive");
  }
  linear::require_feasible(p0);

  OptResult out;
  GeneratorParams p = p0;
  double loss = linear::loss_variable_part(m, p, s, cfg.quad_points);
  const double offset = linear::loss_closed_form(m, p, s, cfg.quad_points) - loss;
  double trial_u = cfg.step_size;
  double trial_v = cfg.step_size;
  GeneratorParams best = p;
  double best_loss = loss;
  int flat_iters = 0;

  // One backtracked step on the masked gradient; false when the line search
  // ran out of representable decrease.
  const auto block_step = [&](const Gradient& masked, double& trial) {
    try {
      StepResult step = riemannian_step(m, p, s, masked, cfg, trial, loss);
      if (step.step == 0.0) return true;
      p = std::move(step.params);
      loss = step.loss;
      trial = std::min(2.0 * step.step, 1e6);
      return true;
    } catch (const StalledOptimization&) {
      return false;
    }
  };

  for (long iter = 0;; ++iter) {
    const Gradient g = euclidean_gradient(m, p, s, cfg.quad_points);
    const double gnorm = gradient_norm(riemannian_gradient(p.u, g));
    out.trace.records.push_back(
        {iter, loss + offset, gnorm, max_principal_angle(m, p.u), gram_deviation(m, p.v)});
    out.iterations = iter;
    if (gnorm <= cfg.grad_tol) {
      out.grad_tol_met = true;
      break;
    }
    if (iter >= cfg.max_iters) break;

    bool moved = false;
    if (cfg.block_steps) {
      // U and V see curvatures that differ by orders of magnitude at small
      // sigma, so each block keeps its own step size.
      moved = block_step({g.du, Mat::Zero(g.dv.rows(), g.dv.cols())}, trial_u);
      const Gradient gv = euclidean_gradient(m, p, s, cfg.quad_points);
      moved = block_step({Mat::Zero(gv.du.rows(), gv.du.cols()), gv.dv}, trial_v) || moved;
    } else {
      moved = block_step(g, trial_u);
    }
    if (!moved) {
      // No representable decrease left; report the best iterate.
      out.stalled = true;
      break;
    }
    if (loss < best_loss - 8.0 * std::numeric_limits<double>::epsilon() * std::abs(best_loss)) {
      flat_iters = 0;
    } else if (++flat_iters >= 50) {
      // Accepted steps no longer change the loss beyond roundoff.
      out.stalled = true;
    }
    if (loss < best_loss) {
      best_loss = loss;
      best = p;
    }
    if (out.stalled) break;
  }

  out.params = out.grad_tol_met ? p : best;
  out.converged = max_principal_angle(m, out.params.u) <= 1e-3 &&
                  gram_deviation(m, out.params.v) <= 1e-3;
  return out;
}

GeneratorParams random_init(Eigen::Index d, Eigen::Index r, Rng& rng) {
  Mat g(d, r);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < r; ++j) g(i, j) = rng.normal();
  GeneratorParams p;
  p.u = thin_qr_positive(g);
  p.v = p.u;
  return p;
}

}  // namespace dsd::stiefel
