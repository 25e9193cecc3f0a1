#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dsd/config.hpp"
#include "dsd/diffusion.hpp"
#include "dsd/distill.hpp"
#include "dsd/metrics.hpp"

namespace dsd::experiments {

enum ExitCode : int {
  kPass = 0,
  kPropertyFailure = 1,
  kUsageError = 2,
  kDivergence = 3,
};

/// One row of the theory verification report.
struct Check {
  std::string name;
  double value = 0.0;
  double target = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Linear-theory and optimizer battery for the configured (d, r, sigma).
/// A non-orthonormal configured basis throws ConfigError.
std::vector<Check> verify_theory(const config::ExperimentConfig& cfg);

/// Dataset plus the fitted moments every metric is scored against.
struct ToyData {
  diffusion::ToyDataset data;
  gauss::GaussianFit clean_fit;  // fresh clean draws
  gauss::GaussianFit noisy_fit;  // the training set itself
};

/// Deterministic in (cfg.dataset, cfg.seed).
ToyData make_toy_data(const config::ExperimentConfig& cfg);

/// Untrained denoiser with the configured architecture.
nn::Denoiser make_network(const config::ExperimentConfig& cfg);

/// Scores a sample set: Frechet to clean, proximal FID at `sigma_hat`, Bures part.
metrics::MetricReport score(const std::string& label, const Mat& samples, const ToyData& toy, double sigma_hat,
                            std::uint64_t seed);

/// Evaluates the generator on a fixed latent batch; identical z and corruption
/// noise at every call so checkpoints are comparable.
distill::EvalHook make_eval_hook(const ToyData& toy, const config::ExperimentConfig& cfg);

/// Generator samples for a fixed seed.
Mat generator_samples(const nn::Denoiser& gen, double sigma_g, long n, std::uint64_t seed);

struct Fig4Result {
  metrics::MetricReport noisy;
  metrics::MetricReport teacher_truncated;
  metrics::MetricReport teacher_full;
  metrics::MetricReport generator;
  bool ordering_holds() const;  // generator < both teacher modes < noisy
  bool chain_holds() const;     // generator < truncated < full < noisy
};

/// Scores the noisy data, both teacher sampling modes and the generator.
Fig4Result fig4_table(const ToyData& toy, const nn::Denoiser& teacher, const nn::Denoiser* generator,
                      double sigma_g, const config::ExperimentConfig& cfg);

int cmd_verify(const config::ExperimentConfig& cfg, std::ostream& log);
int cmd_pretrain(const config::ExperimentConfig& cfg, std::ostream& log);
int cmd_distill(const config::ExperimentConfig& cfg, std::ostream& log);
int cmd_sample(const config::ExperimentConfig& cfg, std::ostream& log);
int cmd_eval(const config::ExperimentConfig& cfg, std::ostream& log);
int cmd_sigma_sweep(const config::ExperimentConfig& cfg, std::ostream& log);

/// Dispatches by name and maps exceptions onto the exit-code contract:
/// configuration, precondition and I/O errors give 2, divergence gives 3.
int run_command(const std::string& name, const config::ExperimentConfig& cfg, std::ostream& log,
                std::ostream& err);

/// Names accepted by run_command.
const std::vector<std::string>& command_names();

}  // namespace dsd::experiments
