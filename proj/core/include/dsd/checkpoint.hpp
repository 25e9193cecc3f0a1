#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "dsd/csv.hpp"
#include "dsd/diffusion.hpp"
#include "dsd/net.hpp"

namespace dsd::checkpoint {

/// Everything needed to resume or reuse a trained net.
struct Checkpoint {
  nn::Denoiser denoiser;
  diffusion::TrainConfig train;
  diffusion::TrainMode mode = diffusion::TrainMode::Ambient;
  long step = 0;
  /// Noise level fed to a one-step generator built from this net; 0 for plain denoisers.
  double generator_sigma = 0.0;
};

nlohmann::json train_config_to_json(const diffusion::TrainConfig& cfg);
diffusion::TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Checkpoint& ck);
Checkpoint from_json(const nlohmann::json& j);

/// Writes through a temporary file and renames it into place. A stamp adds a
/// "provenance" object that load ignores.
void save(const Checkpoint& ck, const std::string& path, const io::Stamp* stamp = nullptr);

/// Throws IoError if the file is missing or malformed.
Checkpoint load(const std::string& path);

}  // namespace dsd::checkpoint
