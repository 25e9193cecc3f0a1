#include "dsd/checkpoint.hpp"

#include "dsd/csv.hpp"
#include "dsd/errors.hpp"

namespace dsd::checkpoint {

using nlohmann::json;

json train_config_to_json(const diffusion::TrainConfig& cfg) {
  return json{{"batch", cfg.batch},
              {"lr", cfg.lr},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"eps", cfg.eps},
              {"cosine_decay", cfg.cosine_decay},
              {"steps", cfg.steps},
              {"sigma_min", cfg.schedule.sigma_min},
              {"sigma_max", cfg.schedule.sigma_max},
              {"sigma_hat", cfg.sigma_hat},
              {"weighting", diffusion::to_string(cfg.weighting)},
              {"seed", cfg.seed}};
}

diffusion::TrainConfig train_config_from_json(const json& j) {
  diffusion::TrainConfig cfg;
  cfg.batch = j.at("batch").get<int>();
  cfg.lr = j.at("lr").get<double>();
  cfg.beta1 = j.at("beta1").get<double>();
  cfg.beta2 = j.at("beta2").get<double>();
  cfg.eps = j.at("eps").get<double>();
  cfg.cosine_decay = j.at("cosine_decay").get<bool>();
  cfg.steps = j.at("steps").get<long>();
  cfg.schedule.sigma_min = j.at("sigma_min").get<double>();
  cfg.schedule.sigma_max = j.at("sigma_max").get<double>();
  cfg.sigma_hat = j.at("sigma_hat").get<double>();
  cfg.weighting = diffusion::loss_weighting_from_string(j.at("weighting").get<std::string>());
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

json to_json(const Checkpoint& ck) {
  const Vec& p = ck.denoiser.net.params();
  return json{{"format", "dsd-checkpoint"},
              {"format_version", 1},
              {"layer_sizes", ck.denoiser.net.sizes()},
              {"activation", "silu"},
              {"precond", nn::to_string(ck.denoiser.precond)},
              {"sigma_data", ck.denoiser.sigma_data},
              {"params", std::vector<double>(p.data(), p.data() + p.size())},
              {"train", train_config_to_json(ck.train)},
              {"mode", diffusion::to_string(ck.mode)},
              {"step", ck.step},
              {"generator_sigma", ck.generator_sigma}};
}

Checkpoint from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "dsd-checkpoint") throw IoError("not a dsd checkpoint");
    if (j.at("format_version").get<int>() != 1) throw IoError("unsupported checkpoint format version");
    Checkpoint ck;
    ck.denoiser.net = nn::DenseNet(j.at("layer_sizes").get<std::vector<int>>());
    const auto params = j.at("params").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(params.size()) != ck.denoiser.net.param_count()) {
      throw IoError("checkpoint parameter count does not match layer sizes");
    }
    ck.denoiser.net.params() = Eigen::Map<const Vec>(params.data(), static_cast<Eigen::Index>(params.size()));
    ck.denoiser.precond = nn::precond_from_string(j.at("precond").get<std::string>());
    ck.denoiser.sigma_data = j.at("sigma_data").get<double>();
    ck.train = train_config_from_json(j.at("train"));
    ck.mode = diffusion::train_mode_from_string(j.at("mode").get<std::string>());
    ck.step = j.at("step").get<long>();
    ck.generator_sigma = j.at("generator_sigma").get<double>();
    return ck;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const PreconditionError& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save(const Checkpoint& ck, const std::string& path, const io::Stamp* stamp) {
  json j = to_json(ck);
  if (stamp != nullptr) {
    j["provenance"] = {{"config_hash", stamp->config_hash}, {"seed", stamp->seed}, {"version", io::version()}};
  }
  io::atomic_write(path, j.dump(1) + "\n");
}

Checkpoint load(const std::string& path) {
  const std::string text = io::read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError("cannot parse checkpoint " + path + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace dsd::checkpoint
