#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dsd/diffusion.hpp"
#include "dsd/errors.hpp"
#include "dsd/net.hpp"
#include "dsd/rng.hpp"
#include "dsd/schedule.hpp"

namespace dsd::distill {

enum class Method { SDS, DMD, SiD };

/// Standard pairs with a teacher trained on the plain objective, Adjusted with
/// an ambient-trained teacher.
enum class Consistency { Standard, Adjusted };

/// w(t) of the generator estimators. SidNormalized divides by the per-sample
/// mean |f_phi - x_g| (held constant); for SDS and DMD it also multiplies by
/// sigma_t^2 so that all three estimators act in data units.
enum class Weighting { Constant, Sigma2, SidNormalized };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
std::string to_string(Consistency c);
Consistency consistency_from_string(const std::string& s);
std::string to_string(Weighting w);
Weighting weighting_from_string(const std::string& s);

/// Teacher training mode required by a consistency mode.
diffusion::TrainMode required_teacher_mode(Consistency c);

struct DistillConfig {
  Method method = Method::SiD;
  Consistency mode = Consistency::Adjusted;
  double alpha = 1.2;
  double fake_lr = 1e-3;
  double gen_lr = 5e-5;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool cosine_decay = true;  // generator lr follows 0.5 (1 + cos(pi k / K))
  long steps = 10000;
  int batch = 256;
  int fake_steps = 1;  // fake updates per generator update
  double sigma_hat = 0.05;
  NoiseSchedule schedule;
  double generator_sigma = 0.5;  // G(z) = D(generator_sigma z, generator_sigma)
  Weighting weighting = Weighting::SidNormalized;
  diffusion::LossWeighting fake_weighting = diffusion::LossWeighting::Edm;
  std::uint64_t seed = 0;
  long eval_every = 500;

  void validate() const;
};

struct MetricRow {
  long step = 0;
  double frechet_clean = std::numeric_limits<double>::quiet_NaN();
  double proximal_fid = std::numeric_limits<double>::quiet_NaN();
  double fake_loss = std::numeric_limits<double>::quiet_NaN();
  double gen_grad_norm = std::numeric_limits<double>::quiet_NaN();
};

struct DistillState {
  nn::Denoiser teacher;  // frozen
  nn::Denoiser fake;
  nn::Denoiser generator;
  double generator_sigma = 0.5;
  nn::Adam fake_opt;
  nn::Adam gen_opt;
  long step = 0;
  std::vector<MetricRow> history;
  Rng fake_rng;
  Rng gen_rng;
  double last_fake_loss = std::numeric_limits<double>::quiet_NaN();
  double last_gen_grad_norm = std::numeric_limits<double>::quiet_NaN();
  Vec last_healthy_generator;  // generator params at the last finite evaluation
  long last_healthy_step = 0;
  bool log_calls = false;
  std::vector<std::string> call_log;
};

/// Raised when distillation blows up; carries the last healthy generator.
class DistillDivergence : public DivergenceError {
 public:
  DistillDivergence(const std::string& what, long step, double loss, nn::Denoiser last_healthy,
                    long healthy_step)
      : DivergenceError(what, step, loss), last_healthy_(std::move(last_healthy)), healthy_step_(healthy_step) {}
  const nn::Denoiser& last_healthy() const noexcept { return last_healthy_; }
  long healthy_step() const noexcept { return healthy_step_; }

 private:
  nn::Denoiser last_healthy_;
  long healthy_step_;
};

/// Fake net and generator start as copies of the teacher. Throws ConfigError
/// if the teacher's training mode does not match cfg.mode.
DistillState init_distillation(const nn::Denoiser& teacher, diffusion::TrainMode teacher_mode,
                               const DistillConfig& cfg);

/// G(z) = D(sigma_g z, sigma_g).
Mat generate(const nn::Denoiser& gen, double sigma_g, const Mat& z, nn::Denoiser::Cache* cache = nullptr);

/// s = -(x_t - f) / sigma_t^2.
Mat score_from_mean(const Mat& f, const Mat& x_t, double sigma_t);
Mat score_from_mean(const Mat& f, const Mat& x_t, const Vec& sigma_t);
/// eps = -sigma_t s.
Mat eps_from_score(const Mat& s, double sigma_t);
Mat eps_from_score(const Mat& s, const Vec& sigma_t);

/// Random inputs of one generator step: z, the corruption noise of x_g, the
/// diffusion levels and the diffusion noise. Drawn row by row in that order.
struct GeneratorDraw {
  Mat z;
  Mat eps_hat;
  Vec sigma;
  Mat eps;
};

GeneratorDraw draw_generator_batch(int batch, int dim, const NoiseSchedule& s, Rng& rng);

struct EstimatorOutput {
  Vec grad;      // generator parameter gradient
  Mat grad_x;    // per-sample gradient with respect to x_g (includes the 1/batch factor)
  Vec weights;   // w(t) per sample
};

/// w (eps_phi(x_t) - eps) pulled back through G; the teacher is constant.
EstimatorOutput generator_grad_sds(const DistillState& st, const GeneratorDraw& draw, const DistillConfig& cfg);

/// w (s_psi(x_t) - s_phi(x_t)) pulled back through G; both nets are constant.
EstimatorOutput generator_grad_dmd(const DistillState& st, const GeneratorDraw& draw, const DistillConfig& cfg);

/// Gradient of E[(1 - alpha) w |f_psi - f_phi|^2 + w (f_phi - f_psi)^T (f_psi - x)]
/// through x_t and both nets' inputs, with w held constant. x is x_g in
/// adjusted mode and the corrupted x_g in standard mode.
EstimatorOutput generator_grad_sid(const DistillState& st, const GeneratorDraw& draw, const DistillConfig& cfg);

EstimatorOutput generator_grad(const DistillState& st, const GeneratorDraw& draw, const DistillConfig& cfg);

/// The SiD objective above at fixed weights.
double sid_objective(const DistillState& st, const GeneratorDraw& draw, const DistillConfig& cfg,
                     const Vec& weights);

/// sum(grad_x .* G(z)); its parameter gradient equals the estimator's when
/// grad_x is held fixed.
double surrogate_objective(const DistillState& st, const GeneratorDraw& draw, const Mat& grad_x);

/// One Adam step of the fake net on corrupted generator output. Returns the loss.
double fake_update(DistillState& st, const DistillConfig& cfg);

/// One Adam step of the generator. Returns the gradient norm.
double generator_update(DistillState& st, const DistillConfig& cfg);

struct EvalResult {
  double frechet_clean = std::numeric_limits<double>::quiet_NaN();
  double proximal_fid = std::numeric_limits<double>::quiet_NaN();
};

using EvalHook = std::function<EvalResult(const DistillState&)>;

/// Runs cfg.steps alternations from st.step, evaluating at step 0, every
/// cfg.eval_every steps and at the end. SDS skips the fake updates.
/// Throws DistillDivergence on a non-finite or exploding loss.
void run_distillation(DistillState& st, const DistillConfig& cfg, const EvalHook& hook);

struct InverseResult {
  Vec z;
  Vec x;
  double residual = 0.0;  // |A x - y|
  long best_step = 0;
};

/// min_z |A G(z) - y|^2 by Adam from z0; returns the best iterate seen.
InverseResult inverse_solve(const nn::Denoiser& gen, double sigma_g, const Mat& a, const Vec& y,
                            const Vec& z0, long steps = 1000, double lr = 0.05);

}  // namespace dsd::distill
