#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsd/gaussian.hpp"
#include "dsd/net.hpp"
#include "dsd/rng.hpp"
#include "dsd/schedule.hpp"

namespace dsd::diffusion {

enum class ToyKind { Ring, Moons, Grid };

std::string to_string(ToyKind k);
ToyKind toy_kind_from_string(const std::string& s);

/// 2-D toy data. `clean` is kept so the harness can score against it;
/// training only ever sees `points`.
struct ToyDataset {
  ToyKind kind = ToyKind::Ring;
  double scale = 1.0;  // ring radius, moon radius, or grid half-width
  double sigma_data = 0.0;
  Mat clean;
  Mat points;  // clean + sigma_data * N(0, I)

  Eigen::Index size() const { return points.rows(); }
};

/// Fresh clean draws from the dataset's generating law.
Mat sample_clean(ToyKind kind, double scale, Eigen::Index n, Rng& rng);

/// Requires n >= 256 and sigma_data >= 0.
ToyDataset make_toy_dataset(ToyKind kind, double scale, Eigen::Index n, double sigma_data, Rng& rng);

/// Per-sample weight applied to the squared residual.
enum class LossWeighting {
  Uniform,  // 1
  Edm,      // (sigma^2 + sd^2) / (sigma sd)^2 with sd the denoiser's sigma_data
};

std::string to_string(LossWeighting w);
LossWeighting loss_weighting_from_string(const std::string& s);

enum class TrainMode { Standard, Ambient };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  int batch = 256;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool cosine_decay = true;  // lr follows 0.5 (1 + cos(pi k / K))
  long steps = 20000;
  NoiseSchedule schedule;
  double sigma_hat = 0.05;
  LossWeighting weighting = LossWeighting::Edm;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Noise draws for one batch: sigma_t then `dim` normals per row, row by row.
struct NoiseDraw {
  Vec sigma;  // unclipped sigma_t
  Mat eps;
};

NoiseDraw draw_noise(Eigen::Index rows, Eigen::Index dim, const NoiseSchedule& s, Rng& rng);

struct LossResult {
  double loss = 0.0;
  Vec grad;  // d loss / d params of the denoiser's net
  Vec per_sample;
};

/// Mean over the batch of w(sigma_t) |D(x + sigma_t eps, sigma_t) - x|^2.
LossResult standard_diffusion_loss(const nn::Denoiser& den, const Mat& batch,
                                   const NoiseSchedule& s, LossWeighting weighting, Rng& rng);

/// Adjusted objective for noisy observations y with assumed noise sigma_hat:
/// sigma_t <- max(sigma_hat, sigma_t), x_t = y + sqrt(sigma_t^2 - sigma_hat^2) eps,
/// residual a D(x_t, sigma_t) + b x_t - y with a = (sigma_t^2 - sigma_hat^2) / sigma_t^2
/// and b = sigma_hat^2 / sigma_t^2. Samples at the clip keep their (zero) loss.
LossResult ambient_tweedie_loss(const nn::Denoiser& den, const Mat& batch, double sigma_hat,
                                const NoiseSchedule& s, LossWeighting weighting, Rng& rng);

/// Ambient objective on explicit draws; `grad` is only filled when
/// `with_grad` is set.
LossResult ambient_tweedie_loss(const nn::Denoiser& den, const Mat& batch, double sigma_hat,
                                const NoiseDraw& draw, LossWeighting weighting, bool with_grad);

using DenoiseFn = std::function<Mat(const Mat& x, double sigma)>;

/// Loss value for an arbitrary denoiser callable (uniform weighting).
double ambient_loss_value(const DenoiseFn& f, const Mat& batch, double sigma_hat, const NoiseDraw& draw);

struct PretrainResult {
  std::vector<double> loss_curve;
};

/// Adam on the standard or ambient objective; the loss exceeding 1e6 (or
/// turning non-finite) throws DivergenceError.
PretrainResult pretrain(nn::Denoiser& den, const ToyDataset& data, const TrainConfig& cfg, TrainMode mode);

enum class SampleMode { Full, Truncated };

std::string to_string(SampleMode m);

/// Geometric grid sigma_max = g_0 > ... > g_{steps-1} = sigma_min.
std::vector<double> sampling_grid(const NoiseSchedule& s, int steps);

/// Euler sampler x <- x - ((g_k - g_{k+1}) / g_k)(x - D(x, g_k)) from x = sigma_max z.
/// Truncated mode returns D(x, g_k) at the first k with g_{k+1} < sigma_hat.
/// Point i starts from the stream rng.split(i).
Mat ambient_sample(const DenoiseFn& f, double sigma_hat, int steps, SampleMode mode, Eigen::Index n,
                   const NoiseSchedule& s, const Rng& rng, Eigen::Index dim = 2);

Mat ambient_sample(const nn::Denoiser& den, double sigma_hat, int steps, SampleMode mode,
                   Eigen::Index n, const NoiseSchedule& s, const Rng& rng);

}  // namespace dsd::diffusion
