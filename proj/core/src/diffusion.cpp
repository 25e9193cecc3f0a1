#include "dsd/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "dsd/errors.hpp"

namespace dsd::diffusion {

std::string to_string(ToyKind k) {
  switch (k) {
    case ToyKind::Ring: return "ring";
    case ToyKind::Moons: return "moons";
    case ToyKind::Grid: return "grid";
  }
  return "ring";
}

ToyKind toy_kind_from_string(const std::string& s) {
  if (s == "ring") return ToyKind::Ring;
  if (s == "moons") return ToyKind::Moons;
  if (s == "grid") return ToyKind::Grid;
  throw ConfigError("unknown toy dataset '" + s + "' (expected ring, moons or grid)");
}

std::string to_string(LossWeighting w) { return w == LossWeighting::Edm ? "edm" : "uniform"; }

LossWeighting loss_weighting_from_string(const std::string& s) {
  if (s == "edm") return LossWeighting::Edm;
  if (s == "uniform") return LossWeighting::Uniform;
  throw ConfigError("unknown loss weighting '" + s + "' (expected edm or uniform)");
}

std::string to_string(TrainMode m) { return m == TrainMode::Ambient ? "ambient" : "standard"; }

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "ambient") return TrainMode::Ambient;
  if (s == "standard") return TrainMode::Standard;
  throw ConfigError("unknown training mode '" + s + "' (expected ambient or standard)");
}

std::string to_string(SampleMode m) { return m == SampleMode::Full ? "full" : "truncated"; }

Mat sample_clean(ToyKind kind, double scale, Eigen::Index n, Rng& rng) {
  Mat x(n, 2);
  constexpr double pi = std::numbers::pi;
  for (Eigen::Index i = 0; i < n; ++i) {
    switch (kind) {
      case ToyKind::Ring: {
        const double th = 2.0 * pi * rng.uniform();
        x(i, 0) = scale * std::cos(th);
        x(i, 1) = scale * std::sin(th);
        break;
      }
      case ToyKind::Moons: {
        const double th = pi * rng.uniform();
        if (rng.below(2) == 0) {
          x(i, 0) = scale * (std::cos(th) - 0.5);
          x(i, 1) = scale * (std::sin(th) - 0.25);
        } else {
          x(i, 0) = scale * (0.5 - std::cos(th));
          x(i, 1) = scale * (0.25 - std::sin(th));
        }
        break;
      }
      case ToyKind::Grid: {
        x(i, 0) = scale * (static_cast<double>(rng.below(3)) - 1.0);
        x(i, 1) = scale * (static_cast<double>(rng.below(3)) - 1.0);
        break;
      }
    }
  }
  return x;
}

ToyDataset make_toy_dataset(ToyKind kind, double scale, Eigen::Index n, double sigma_data, Rng& rng) {
  if (n < 256) throw PreconditionError("make_toy_dataset: need at least 256 points");
  if (!(sigma_data >= 0.0) || !std::isfinite(sigma_data)) {
    throw PreconditionError("make_toy_dataset: sigma_data must be finite and >= 0");
  }
  if (!(scale > 0.0)) throw PreconditionError("make_toy_dataset: scale must be positive");
  ToyDataset ds;
  ds.kind = kind;
  ds.scale = scale;
  ds.sigma_data = sigma_data;
  Rng clean_rng = rng.split(1);
  Rng noise_rng = rng.split(2);
  ds.clean = sample_clean(kind, scale, n, clean_rng);
  ds.points = ds.clean;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) ds.points(i, j) += sigma_data * noise_rng.normal();
  return ds;
}

void TrainConfig::validate() const {
  schedule.validate();
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (steps < 0) throw ConfigError("train: steps must be >= 0");
  if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
  if (!(sigma_hat >= 0.0) || !std::isfinite(sigma_hat)) throw ConfigError("train: sigma_hat must be >= 0");
}

NoiseDraw draw_noise(Eigen::Index rows, Eigen::Index dim, const NoiseSchedule& s, Rng& rng) {
  NoiseDraw d;
  d.sigma.resize(rows);
  d.eps.resize(rows, dim);
  for (Eigen::Index i = 0; i < rows; ++i) {
    d.sigma(i) = s.sample_sigma(rng);
    for (Eigen::Index j = 0; j < dim; ++j) d.eps(i, j) = rng.normal();
  }
  return d;
}

namespace {

double weight_of(LossWeighting w, double sigma, double sd) {
  if (w == LossWeighting::Uniform) return 1.0;
  return (sigma * sigma + sd * sd) / ((sigma * sd) * (sigma * sd));
}

void require_batch(const nn::Denoiser& den, const Mat& batch) {
  if (batch.rows() < 1) throw PreconditionError("diffusion loss: empty batch");
  if (batch.cols() != den.data_dim()) throw PreconditionError("diffusion loss: batch dimension mismatch");
}

}  // namespace

LossResult standard_diffusion_loss(const nn::Denoiser& den, const Mat& batch, const NoiseSchedule& s,
                                   LossWeighting weighting, Rng& rng) {
  require_batch(den, batch);
  const NoiseDraw draw = draw_noise(batch.rows(), batch.cols(), s, rng);
  const Eigen::Index n = batch.rows();
  Mat xt(n, batch.cols());
  for (Eigen::Index i = 0; i < n; ++i) xt.row(i) = batch.row(i) + draw.sigma(i) * draw.eps.row(i);

  nn::Denoiser::Cache cache;
  const Mat out = den.forward(xt, draw.sigma, &cache);
  const Mat resid = out - batch;
  LossResult res;
  res.per_sample.resize(n);
  Mat up(n, batch.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = weight_of(weighting, draw.sigma(i), den.sigma_data);
    res.per_sample(i) = w * resid.row(i).squaredNorm();
    up.row(i) = (2.0 * w / static_cast<double>(n)) * resid.row(i);
  }
  res.loss = res.per_sample.mean();
  res.grad = Vec::Zero(den.net.param_count());
  den.backward(cache, up, &res.grad);
  return res;
}

LossResult ambient_tweedie_loss(const nn::Denoiser& den, const Mat& batch, double sigma_hat,
                                const NoiseDraw& draw, LossWeighting weighting, bool with_grad) {
  require_batch(den, batch);
  if (!(sigma_hat >= 0.0)) throw PreconditionError("ambient_tweedie_loss: sigma_hat must be >= 0");
  const Eigen::Index n = batch.rows();
  const double sh2 = sigma_hat * sigma_hat;
  Vec sig(n), a(n), b(n);
  Mat xt(n, batch.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    sig(i) = std::max(sigma_hat, draw.sigma(i));
    const double s2 = sig(i) * sig(i);
    a(i) = (s2 - sh2) / s2;
    b(i) = sh2 / s2;
    xt.row(i) = batch.row(i) + std::sqrt(s2 - sh2) * draw.eps.row(i);
  }
  nn::Denoiser::Cache cache;
  const Mat out = den.forward(xt, sig, with_grad ? &cache : nullptr);
  LossResult res;
  res.per_sample.resize(n);
  Mat up(n, batch.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = (a(i) * out.row(i) + b(i) * xt.row(i) - batch.row(i)).eval();
    const double w = weight_of(weighting, sig(i), den.sigma_data);
    res.per_sample(i) = w * r.squaredNorm();
    up.row(i) = (2.0 * w * a(i) / static_cast<double>(n)) * r;
  }
  res.loss = res.per_sample.mean();
  if (with_grad) {
    res.grad = Vec::Zero(den.net.param_count());
    den.backward(cache, up, &res.grad);
  }
  return res;
}

LossResult ambient_tweedie_loss(const nn::Denoiser& den, const Mat& batch, double sigma_hat,
                                const NoiseSchedule& s, LossWeighting weighting, Rng& rng) {
  require_batch(den, batch);
  const NoiseDraw draw = draw_noise(batch.rows(), batch.cols(), s, rng);
  return ambient_tweedie_loss(den, batch, sigma_hat, draw, weighting, true);
}

double ambient_loss_value(const DenoiseFn& f, const Mat& batch, double sigma_hat, const NoiseDraw& draw) {
  const double sh2 = sigma_hat * sigma_hat;
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    const double s = std::max(sigma_hat, draw.sigma(i));
    const double s2 = s * s;
    const Mat xt = batch.row(i) + std::sqrt(s2 - sh2) * draw.eps.row(i);
    const Mat out = f(xt, s);
    total += (((s2 - sh2) / s2) * out + (sh2 / s2) * xt - batch.row(i)).squaredNorm();
  }
  return total / static_cast<double>(batch.rows());
}

PretrainResult pretrain(nn::Denoiser& den, const ToyDataset& data, const TrainConfig& cfg, TrainMode mode) {
  cfg.validate();
  if (data.points.cols() != den.data_dim()) throw PreconditionError("pretrain: data dimension mismatch");
  PretrainResult res;
  res.loss_curve.reserve(static_cast<std::size_t>(cfg.steps));
  nn::Adam opt{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, {}, {}, 0};
  Rng root(cfg.seed);
  Rng batch_rng = root.split(11);
  Rng noise_rng = root.split(12);
  const Eigen::Index n = data.points.rows();
  Mat batch(cfg.batch, data.points.cols());
  for (long step = 0; step < cfg.steps; ++step) {
    for (int i = 0; i < cfg.batch; ++i) batch.row(i) = data.points.row(static_cast<Eigen::Index>(batch_rng.below(n)));
    const LossResult lr = mode == TrainMode::Ambient
                              ? ambient_tweedie_loss(den, batch, cfg.sigma_hat, cfg.schedule, cfg.weighting, noise_rng)
                              : standard_diffusion_loss(den, batch, cfg.schedule, cfg.weighting, noise_rng);
    if (!std::isfinite(lr.loss) || lr.loss > 1e6) {
      std::ostringstream msg;
      msg << "pretrain diverged at step " << step << " (loss " << lr.loss << ")";
      throw DivergenceError(msg.str(), step, lr.loss);
    }
    res.loss_curve.push_back(lr.loss);
    if (cfg.cosine_decay) {
      opt.lr = cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(cfg.steps)));
    }
    opt.step(den.net.params(), lr.grad);
  }
  return res;
}

std::vector<double> sampling_grid(const NoiseSchedule& s, int steps) {
  s.validate();
  if (steps < 2) throw PreconditionError("sampling_grid: need at least 2 steps");
  std::vector<double> g(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) g[k] = s.sigma(1.0 - static_cast<double>(k) / (steps - 1));
  g.front() = s.sigma_max;
  g.back() = s.sigma_min;
  return g;
}

Mat ambient_sample(const DenoiseFn& f, double sigma_hat, int steps, SampleMode mode, Eigen::Index n,
                   const NoiseSchedule& s, const Rng& rng, Eigen::Index dim) {
  const std::vector<double> grid = sampling_grid(s, steps);
  Mat x(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng pr = rng.split(static_cast<std::uint64_t>(i));
    for (Eigen::Index j = 0; j < dim; ++j) x(i, j) = s.sigma_max * pr.normal();
  }
  if (n == 0) return x;
  for (int k = 0; k + 1 < steps; ++k) {
    const Mat x0 = f(x, grid[k]);
    if (mode == SampleMode::Truncated && grid[k + 1] < sigma_hat) return x0;
    x -= ((grid[k] - grid[k + 1]) / grid[k]) * (x - x0);
  }
  return x;
}

Mat ambient_sample(const nn::Denoiser& den, double sigma_hat, int steps, SampleMode mode, Eigen::Index n,
                   const NoiseSchedule& s, const Rng& rng) {
  return ambient_sample([&den](const Mat& x, double sigma) { return den.forward(x, sigma); }, sigma_hat,
                        steps, mode, n, s, rng, den.data_dim());
}

}  // namespace dsd::diffusion
