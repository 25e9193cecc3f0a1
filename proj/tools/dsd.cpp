#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dsd/config.hpp"
#include "dsd/csv.hpp"
#include "dsd/errors.hpp"
#include "dsd/experiments.hpp"

namespace {

namespace ex = dsd::experiments;

std::string default_out(const std::string& command) {
  const char* root = std::getenv("DSD_OUT_ROOT");
  const std::string base = root != nullptr && *root != '\0' ? root : "runs";
  return base + "/" + command;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Denoising score distillation experiments on linear and 2-D toy models"};
  app.set_version_flag("--version", std::string(dsd::io::version()));
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  bool plots = false;

  for (const std::string& name : ex::command_names()) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out, "output directory (default $DSD_OUT_ROOT/<command>)");
    sub->add_flag("--plots", plots, "also write SVG scatter plots");
  }
  app.add_subcommand("schema", "print the config JSON schema");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : ex::kUsageError;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  if (command == "schema") {
    std::cout << dsd::config::schema().dump(2) << "\n";
    return ex::kPass;
  }

  dsd::config::ExperimentConfig cfg;
  try {
    if (!config_path.empty()) cfg = dsd::config::load(config_path);
  } catch (const dsd::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ex::kUsageError;
  }
  if (sub->count("--seed") > 0) cfg.seed = seed;
  if (!out.empty()) {
    cfg.output_dir = out;
  } else if (cfg.output_dir.empty()) {
    cfg.output_dir = default_out(command);
  }
  if (plots) cfg.plots = true;
  cfg.propagate();
  return ex::run_command(command, cfg, std::cout, std::cerr);
}
