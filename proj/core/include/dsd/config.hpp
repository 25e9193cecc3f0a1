#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsd/diffusion.hpp"
#include "dsd/distill.hpp"
#include "dsd/gaussian.hpp"
#include "dsd/stiefel.hpp"

namespace dsd::config {

inline constexpr int kSchemaVersion = 1;

struct LinearSection {
  long d = 8;
  long r = 2;
  double sigma = 0.5;
  int seeds = 20;                 // random initializations for the multi-seed check
  std::optional<Mat> basis;       // explicit E; random when absent
};

struct DatasetSection {
  diffusion::ToyKind kind = diffusion::ToyKind::Ring;
  double scale = 0.25;
  long n = 65536;
  double sigma_data = 0.05;
  long reference_n = 100000;      // fresh clean draws used as the Frechet reference
};

struct NetworkSection {
  std::vector<int> hidden{64, 64, 64};
  nn::Precond precond = nn::Precond::Edm;
  double sigma_data = 0.0;        // EDM sigma_data; 0 means scale / sqrt(2)
};

struct SamplingSection {
  int steps = 64;
  long n = 20000;
  diffusion::SampleMode mode = diffusion::SampleMode::Truncated;
};

struct EvalSection {
  long n_samples = 20000;
};

struct InputsSection {
  std::string teacher;    // checkpoint; default <out>/teacher.json
  std::string generator;  // checkpoint; default <out>/generator.json
  std::string samples;    // point CSV scored by eval when set
};

struct ExperimentConfig {
  std::string kind;  // verify, pretrain, distill, sample, eval, sigma-sweep; empty = any
  std::uint64_t seed = 0;
  std::string output_dir;
  bool plots = false;
  NoiseSchedule schedule;
  LinearSection linear;
  stiefel::OptConfig optimizer;
  DatasetSection dataset;
  NetworkSection network;
  diffusion::TrainConfig train;
  diffusion::TrainMode train_mode = diffusion::TrainMode::Ambient;
  distill::DistillConfig distill;
  SamplingSection sampling;
  EvalSection eval;
  InputsSection inputs;
  std::vector<double> sweep_sigma_hats;  // empty = {0, sigma_data, 2 sigma_data}

  /// EDM sigma_data actually used by the networks.
  double network_sigma_data() const;
  /// Pushes the shared fields (schedule, seed) into the sub-configs.
  void propagate();
};

/// Parses and validates; unknown keys and wrong types throw ConfigError.
ExperimentConfig from_json(const nlohmann::json& j);
ExperimentConfig parse(const std::string& text);
ExperimentConfig load(const std::string& path);

/// Full serialization with every field present.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// 16 hex digits of FNV-1a over the compact serialization, leaving out
/// output_dir and plots.
std::string config_hash(const ExperimentConfig& cfg);

/// JSON Schema (draft 2020-12) describing the accepted document.
nlohmann::json schema();

}  // namespace dsd::config
