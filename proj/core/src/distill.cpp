#include "dsd/distill.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace dsd::distill {

std::string to_string(Method m) {
  switch (m) {
    case Method::SDS: return "sds";
    case Method::DMD: return "dmd";
    case Method::SiD: return "sid";
  }
  return "sid";
}

Method method_from_string(const std::string& s) {
  if (s == "sds") return Method::SDS;
  if (s == "dmd") return Method::DMD;
  if (s == "sid") return Method::SiD;
  throw ConfigError("unknown distillation method '" + s + "' (expected sds, dmd or sid)");
}

std::string to_string(Consistency c) { return c == Consistency::Adjusted ? "adjusted" : "standard"; }

Consistency consistency_from_string(const std::string& s) {
  if (s == "adjusted") return Consistency::Adjusted;
  if (s == "standard") return Consistency::Standard;
  throw ConfigError("unknown consistency mode '" + s + "' (expected adjusted or standard)");
}

std::string to_string(Weighting w) {
  switch (w) {
    case Weighting::Constant: return "constant";
    case Weighting::Sigma2: return "sigma2";
    case Weighting::SidNormalized: return "sid-normalized";
  }
  return "sid-normalized";
}

Weighting weighting_from_string(const std::string& s) {
  if (s == "constant") return Weighting::Constant;
  if (s == "sigma2") return Weighting::Sigma2;
  if (s == "sid-normalized") return Weighting::SidNormalized;
  throw ConfigError("unknown generator weighting '" + s + "' (expected constant, sigma2 or sid-normalized)");
}

diffusion::TrainMode required_teacher_mode(Consistency c) {
  return c == Consistency::Adjusted ? diffusion::TrainMode::Ambient : diffusion::TrainMode::Standard;
}

void DistillConfig::validate() const {
  schedule.validate();
  if (steps < 0) throw ConfigError("distill: steps must be >= 0");
  if (batch < 1) throw ConfigError("distill: batch must be >= 1");
  if (fake_steps < 1) throw ConfigError("distill: fake_steps must be >= 1");
  if (!std::isfinite(alpha)) throw ConfigError("distill: alpha must be finite");
  if (!(fake_lr >= 0.0) || !(gen_lr >= 0.0)) throw ConfigError("distill: learning rates must be >= 0");
  if (!(sigma_hat >= 0.0) || !std::isfinite(sigma_hat)) throw ConfigError("distill: sigma_hat must be >= 0");
  if (!(generator_sigma > 0.0)) throw ConfigError("distill: generator_sigma must be positive");
  if (eval_every < 1) throw ConfigError("distill: eval_every must be >= 1");
}

DistillState init_distillation(const nn::Denoiser& teacher, diffusion::TrainMode teacher_mode,
                               const DistillConfig& cfg) {
  cfg.validate();
  if (teacher_mode != required_teacher_mode(cfg.mode)) {
    throw ConfigError("distill: " + to_string(cfg.mode) + " consistency needs a teacher pretrained in " +
                      diffusion::to_string(required_teacher_mode(cfg.mode)) + " mode, got " +
                      diffusion::to_string(teacher_mode));
  }
  if (teacher.net.input_dim() != teacher.data_dim() + 1) {
    throw ConfigError("distill: teacher net does not have a noise-level channel");
  }
  DistillState st;
  st.teacher = teacher;
  st.fake = teacher;
  st.generator = teacher;
  st.generator_sigma = cfg.generator_sigma;
  st.fake_opt = nn::Adam{cfg.fake_lr, cfg.beta1, cfg.beta2, cfg.eps, {}, {}, 0};
  st.gen_opt = nn::Adam{cfg.gen_lr, cfg.beta1, cfg.beta2, cfg.eps, {}, {}, 0};
  const Rng root(cfg.seed);
  st.fake_rng = root.split(21);
  st.gen_rng = root.split(22);
  st.last_healthy_generator = st.generator.net.params();
  return st;
}

Mat generate(const nn::Denoiser& gen, double sigma_g, const Mat& z, nn::Denoiser::Cache* cache) {
  return gen.forward(sigma_g * z, Vec::Constant(z.rows(), sigma_g), cache);
}

Mat score_from_mean(const Mat& f, const Mat& x_t, double sigma_t) {
  if (!(sigma_t > 0.0)) throw DomainError("score_from_mean: sigma_t must be positive");
  return -(x_t - f) / (sigma_t * sigma_t);
}

Mat score_from_mean(const Mat& f, const Mat& x_t, const Vec& sigma_t) {
  Mat s(f.rows(), f.cols());
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    if (!(sigma_t(i) > 0.0)) throw DomainError("score_from_mean: sigma_t must be positive");
    s.row(i) = -(x_t.row(i) - f.row(i)) / (sigma_t(i) * sigma_t(i));
  }
  return s;
}

Mat eps_from_score(const Mat& s, double sigma_t) {
  if (!(sigma_t > 0.0)) throw DomainError("eps_from_score: sigma_t must be positive");
  return -sigma_t * s;
}

Mat eps_from_score(const Mat& s, const Vec& sigma_t) {
  Mat e(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    if (!(sigma_t(i) > 0.0)) throw DomainError("eps_from_score: sigma_t must be positive");
    e.row(i) = -sigma_t(i) * s.row(i);
  }
  return e;
}

GeneratorDraw draw_generator_batch(int batch, int dim, const NoiseSchedule& s, Rng& rng) {
  GeneratorDraw d;
  d.z.resize(batch, dim);
  d.eps_hat.resize(batch, dim);
  d.sigma.resize(batch);
  d.eps.resize(batch, dim);
  for (int i = 0; i < batch; ++i) {
    for (int j = 0; j < dim; ++j) d.z(i, j) = rng.normal();
    for (int j = 0; j < dim; ++j) d.eps_hat(i, j) = rng.normal();
    d.sigma(i) = s.sample_sigma(rng);
    for (int j = 0; j < dim; ++j) d.eps(i, j) = rng.normal();
  }
  return d;
}

namespace {

/// Quantities shared by the three estimators.
struct Forward {
  nn::Denoiser::Cache gen_cache;
  Mat x_g;
  Mat x_in;  // x_g, or x_g + sigma_hat eps_hat in standard mode
  Mat x_t;
};

Forward forward_generator(const DistillState& st, const GeneratorDraw& draw, const DistillConfig& cfg) {
  Forward fw;
  fw.x_g = generate(st.generator, st.generator_sigma, draw.z, &fw.gen_cache);
  fw.x_in = cfg.mode == Consistency::Standard ? Mat(fw.x_g + cfg.sigma_hat * draw.eps_hat) : fw.x_g;
  fw.x_t = fw.x_in + (draw.eps.array().colwise() * draw.sigma.array()).matrix();
  return fw;
}

Vec estimator_weights(const DistillConfig& cfg, const Mat& f_phi, const Mat& x_g, const Vec& sigma) {
  Vec w(sigma.size());
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    const double s2 = sigma(i) * sigma(i);
    switch (cfg.weighting) {
      case Weighting::Constant: w(i) = 1.0; break;
      case Weighting::Sigma2: w(i) = s2; break;
      case Weighting::SidNormalized: {
        const double scale = std::max((f_phi.row(i) - x_g.row(i)).cwiseAbs().mean(), 1e-5);
        w(i) = (cfg.method == Method::SiD ? 1.0 : s2) / scale;
        break;
      }
    }
  }
  return w;
}

EstimatorOutput finish(const DistillState& st, const Forward& fw, Mat grad_x, Vec weights) {
  EstimatorOutput out;
  out.grad = Vec::Zero(st.generator.net.param_count());
  // G(z) = D(sigma_g z, sigma_g): parameter gradient of D at the cached input.
  st.generator.backward(fw.gen_cache, grad_x, &out.grad);
  out.grad_x = std::move(grad_x);
  out.weights = std::move(weights);
  return out;
}

}  // namespace

EstimatorOutput generator_grad_sds(const DistillState& st, const GeneratorDraw& draw, const DistillConfig& cfg) {
  const Forward fw = forward_generator(st, draw, cfg);
  const Mat f_phi = st.teacher.forward(fw.x_t, draw.sigma);
  const Mat eps_phi = eps_from_score(score_from_mean(f_phi, fw.x_t, draw.sigma), draw.sigma);
  const Vec w = estimator_weights(cfg, f_phi, fw.x_g, draw.sigma);
  const double inv_n = 1.0 / static_cast<double>(draw.z.rows());
  Mat gx = ((eps_phi - draw.eps).array().colwise() * (w.array() * inv_n)).matrix();
  return finish(st, fw, std::move(gx), w);
}

EstimatorOutput generator_grad_dmd(const DistillState& st, const GeneratorDraw& draw, const DistillConfig& cfg) {
  const Forward fw = forward_generator(st, draw, cfg);
  const Mat f_phi = st.teacher.forward(fw.x_t, draw.sigma);
  const Mat f_psi = st.fake.forward(fw.x_t, draw.sigma);
  const Mat diff = score_from_mean(f_psi, fw.x_t, draw.sigma) - score_from_mean(f_phi, fw.x_t, draw.sigma);
  const Vec w = estimator_weights(cfg, f_phi, fw.x_g, draw.sigma);
  const double inv_n = 1.0 / static_cast<double>(draw.z.rows());
  Mat gx = (diff.array().colwise() * (w.array() * inv_n)).matrix();
  return finish(st, fw, std::move(gx), w);
}

EstimatorOutput generator_grad_sid(const DistillState& st, const GeneratorDraw& draw, const DistillConfig& cfg) {
  const Forward fw = forward_generator(st, draw, cfg);
  nn::Denoiser::Cache phi_cache, psi_cache;
  const Mat f_phi = st.teacher.forward(fw.x_t, draw.sigma, &phi_cache);
  const Mat f_psi = st.fake.forward(fw.x_t, draw.sigma, &psi_cache);
  const Vec w = estimator_weights(cfg, f_phi, fw.x_g, draw.sigma);
  const double inv_n = 1.0 / static_cast<double>(draw.z.rows());
  const Vec wn = w * inv_n;

  const Mat d = f_psi - f_phi;
  const Mat r = f_psi - fw.x_in;
  const double two_k = 2.0 * (1.0 - cfg.alpha);
  const Mat up_phi = ((-two_k * d + r).array().colwise() * wn.array()).matrix();
  const Mat up_psi = ((two_k * d - r - d).array().colwise() * wn.array()).matrix();
  Mat gx = st.teacher.backward(phi_cache, up_phi, nullptr) + st.fake.backward(psi_cache, up_psi, nullptr);
  gx += (d.array().colwise() * wn.array()).matrix();  // direct term of -(f_phi - f_psi)^T x
  return finish(st, fw, std::move(gx), w);
}

EstimatorOutput generator_grad(const DistillState& st, const GeneratorDraw& draw, const DistillConfig& cfg) {
  switch (cfg.method) {
    case Method::SDS: return generator_grad_sds(st, draw, cfg);
    case Method::DMD: return generator_grad_dmd(st, draw, cfg);
    case Method::SiD: return generator_grad_sid(st, draw, cfg);
  }
  return generator_grad_sid(st, draw, cfg);
}

double sid_objective(const DistillState& st, const GeneratorDraw& draw, const DistillConfig& cfg,
                     const Vec& weights) {
  const Forward fw = forward_generator(st, draw, cfg);
  const Mat f_phi = st.teacher.forward(fw.x_t, draw.sigma);
  const Mat f_psi = st.fake.forward(fw.x_t, draw.sigma);
  double total = 0.0;
  for (Eigen::Index i = 0; i < draw.z.rows(); ++i) {
    const auto d = (f_psi.row(i) - f_phi.row(i)).eval();
    total += weights(i) * ((1.0 - cfg.alpha) * d.squaredNorm() - d.dot(f_psi.row(i) - fw.x_in.row(i)));
  }
  return total / static_cast<double>(draw.z.rows());
}

double surrogate_objective(const DistillState& st, const GeneratorDraw& draw, const Mat& grad_x) {
  return generate(st.generator, st.generator_sigma, draw.z).cwiseProduct(grad_x).sum();
}

double fake_update(DistillState& st, const DistillConfig& cfg) {
  if (st.log_calls) st.call_log.push_back("fake_update");
  const int dim = st.generator.data_dim();
  Mat z(cfg.batch, dim), eps_hat(cfg.batch, dim);
  for (int i = 0; i < cfg.batch; ++i) {
    for (int j = 0; j < dim; ++j) z(i, j) = st.fake_rng.normal();
    for (int j = 0; j < dim; ++j) eps_hat(i, j) = st.fake_rng.normal();
  }
  const Mat y = generate(st.generator, st.generator_sigma, z) + cfg.sigma_hat * eps_hat;
  const diffusion::LossResult lr =
      cfg.mode == Consistency::Adjusted
          ? diffusion::ambient_tweedie_loss(st.fake, y, cfg.sigma_hat, cfg.schedule, cfg.fake_weighting, st.fake_rng)
          : diffusion::standard_diffusion_loss(st.fake, y, cfg.schedule, cfg.fake_weighting, st.fake_rng);
  st.fake_opt.lr = cfg.fake_lr;
  st.fake_opt.step(st.fake.net.params(), lr.grad);
  st.last_fake_loss = lr.loss;
  return lr.loss;
}

double generator_update(DistillState& st, const DistillConfig& cfg) {
  if (st.log_calls) st.call_log.push_back("generator_update");
  const GeneratorDraw draw = draw_generator_batch(cfg.batch, st.generator.data_dim(), cfg.schedule, st.gen_rng);
  const EstimatorOutput g = generator_grad(st, draw, cfg);
  double lr = cfg.gen_lr;
  if (cfg.cosine_decay && cfg.steps > 0) {
    const double frac = std::min(1.0, static_cast<double>(st.step) / static_cast<double>(cfg.steps));
    lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  }
  st.gen_opt.lr = lr;
  st.gen_opt.step(st.generator.net.params(), g.grad);
  st.last_gen_grad_norm = g.grad.norm();
  return st.last_gen_grad_norm;
}

namespace {

[[noreturn]] void diverge(const DistillState& st, const std::string& why, double value) {
  std::ostringstream msg;
  msg << "distillation diverged at step " << st.step << ": " << why << " (" << value << ")";
  nn::Denoiser healthy = st.generator;
  healthy.net.params() = st.last_healthy_generator;
  throw DistillDivergence(msg.str(), st.step, value, std::move(healthy), st.last_healthy_step);
}

void evaluate(DistillState& st, const EvalHook& hook) {
  MetricRow row;
  row.step = st.step;
  row.fake_loss = st.last_fake_loss;
  row.gen_grad_norm = st.last_gen_grad_norm;
  if (hook) {
    const EvalResult r = hook(st);
    row.frechet_clean = r.frechet_clean;
    row.proximal_fid = r.proximal_fid;
    if (!std::isfinite(r.proximal_fid)) {
      st.history.push_back(row);
      diverge(st, "non-finite proximal FID", r.proximal_fid);
    }
  }
  st.history.push_back(row);
  st.last_healthy_generator = st.generator.net.params();
  st.last_healthy_step = st.step;
}

}  // namespace

void run_distillation(DistillState& st, const DistillConfig& cfg, const EvalHook& hook) {
  cfg.validate();
  const std::uint64_t teacher_hash = st.teacher.net.hash();
  const long end = st.step + cfg.steps;
  if (st.history.empty() || st.history.back().step != st.step) evaluate(st, hook);
  while (st.step < end) {
    if (cfg.method != Method::SDS) {
      for (int k = 0; k < cfg.fake_steps; ++k) {
        const double loss = fake_update(st, cfg);
        if (!std::isfinite(loss) || loss > 1e6) diverge(st, "fake loss", loss);
      }
    }
    const double gnorm = generator_update(st, cfg);
    if (!std::isfinite(gnorm) || gnorm > 1e6) diverge(st, "generator gradient norm", gnorm);
    ++st.step;
    if (st.step % cfg.eval_every == 0 || st.step == end) evaluate(st, hook);
  }
  if (st.teacher.net.hash() != teacher_hash) throw Error("run_distillation: teacher parameters changed");
}

InverseResult inverse_solve(const nn::Denoiser& gen, double sigma_g, const Mat& a, const Vec& y, const Vec& z0,
                            long steps, double lr) {
  const int d = gen.data_dim();
  if (z0.size() != d) throw PreconditionError("inverse_solve: z0 has the wrong dimension");
  if (a.cols() != d || a.rows() != y.size()) throw PreconditionError("inverse_solve: forward operator shape mismatch");
  if (steps < 0) throw PreconditionError("inverse_solve: steps must be >= 0");
  Vec z = z0;
  nn::Adam opt{lr, 0.9, 0.999, 1e-8, {}, {}, 0};
  InverseResult best;
  double best_loss = std::numeric_limits<double>::infinity();
  for (long k = 0;; ++k) {
    nn::Denoiser::Cache cache;
    const Mat x = generate(gen, sigma_g, z.transpose(), &cache);
    const Vec xv = x.row(0).transpose();
    const Vec r = a * xv - y;
    const double loss = r.squaredNorm();
    if (loss < best_loss) {
      best_loss = loss;
      best.z = z;
      best.x = xv;
      best.residual = std::sqrt(loss);
      best.best_step = k;
    }
    if (k == steps) break;
    const Mat up = (2.0 * a.transpose() * r).transpose();
    const Vec gz = sigma_g * gen.backward(cache, up, nullptr).row(0).transpose();
    opt.step(z, gz);
  }
  return best;
}

}  // namespace dsd::distill
