#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "dsd/csv.hpp"
#include "dsd/experiments.hpp"

using namespace dsd;
using experiments::run_command;
namespace fs = std::filesystem;

namespace {

config::ExperimentConfig tiny(const fs::path& dir) {
  config::ExperimentConfig c = config::parse(R"({
    "linear": {"d": 4, "r": 1, "sigma": 0.3, "seeds": 3},
    "dataset": {"n": 1024, "reference_n": 2000},
    "network": {"hidden": [16, 16]},
    "train": {"steps": 60, "batch": 64},
    "distill": {"steps": 20, "eval_every": 10, "batch": 64},
    "sampling": {"n": 200, "steps": 16},
    "eval": {"n_samples": 500}
  })");
  c.output_dir = dir.string();
  c.propagate();
  return c;
}

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dsd_exp_" + name);
  fs::remove_all(p);
  return p;
}

int run(const std::string& cmd, const config::ExperimentConfig& c) {
  std::ostringstream log, err;
  return run_command(cmd, c, log, err);
}

}  // namespace

TEST_SUITE("experiments") {

TEST_CASE("verify passes on a small instance and writes its report") {
  const fs::path dir = fresh("verify");
  CHECK(run("verify", tiny(dir)) == experiments::kPass);
  const io::ParsedCsv report = io::read_csv((dir / "report.csv").string());
  CHECK(report.columns == std::vector<std::string>{"check", "value", "target", "tolerance", "pass"});
  CHECK(report.rows.size() >= 10);
  for (const auto& row : report.rows) CHECK(row[4] == "1");
  CHECK(fs::exists(dir / "config.json"));
}

TEST_CASE("exit codes for bad input") {
  const fs::path dir = fresh("codes");
  config::ExperimentConfig c = tiny(dir);
  CHECK(run("train", c) == experiments::kUsageError);
  config::ExperimentConfig wrong_kind = c;
  wrong_kind.kind = "verify";
  CHECK(run("pretrain", wrong_kind) == experiments::kUsageError);
  // Nothing to sample from yet.
  CHECK(run("sample", c) == experiments::kUsageError);
  CHECK(run("eval", c) == experiments::kUsageError);
  config::ExperimentConfig bad_basis = c;
  bad_basis.linear.basis = Mat::Ones(4, 1);
  CHECK(run("verify", bad_basis) == experiments::kUsageError);
}

TEST_CASE("pretraining divergence exits with 3 and keeps the last state") {
  const fs::path dir = fresh("diverge");
  config::ExperimentConfig c = tiny(dir);
  c.train.lr = 1e9;
  c.train.steps = 200;
  CHECK(run("pretrain", c) == experiments::kDivergence);
  CHECK(fs::exists(dir / "teacher_diverged.json"));
  CHECK_FALSE(fs::exists(dir / "teacher.json"));
}

TEST_CASE("tiny pipeline is deterministic") {
  std::vector<std::string> names{"dataset.csv", "clean.csv", "loss_curve.csv", "history.csv",
                                 "selection.csv", "samples.csv", "eval.csv", "ordering.csv"};
  std::vector<std::string> first;
  for (const char* tag : {"a", "b"}) {
    const fs::path dir = fresh(std::string("pipeline_") + tag);
    const config::ExperimentConfig c = tiny(dir);
    REQUIRE(run("pretrain", c) == experiments::kPass);
    REQUIRE(run("distill", c) == experiments::kPass);
    REQUIRE(run("sample", c) == experiments::kPass);
    REQUIRE(run("eval", c) == experiments::kPass);
    for (std::size_t i = 0; i < names.size(); ++i) {
      CAPTURE(names[i]);
      REQUIRE(fs::exists(dir / names[i]));
      const std::string text = io::read_text((dir / names[i]).string());
      CHECK(text.rfind("# config_hash=" + config::config_hash(c), 0) == 0);
      if (first.size() < names.size()) {
        first.push_back(text);
      } else {
        CHECK(text == first[i]);
      }
    }
    CHECK(fs::exists(dir / "teacher.json"));
    CHECK(fs::exists(dir / "generator.json"));
    CHECK(fs::exists(dir / "checkpoints" / "generator_00000010.json"));
  }
}

TEST_CASE("zero samples give a header-only table") {
  const fs::path dir = fresh("empty_sample");
  config::ExperimentConfig c = tiny(dir);
  c.train.steps = 1;
  REQUIRE(run("pretrain", c) == experiments::kPass);
  c.sampling.n = 0;
  CHECK(run("sample", c) == experiments::kPass);
  const io::ParsedCsv p = io::read_csv((dir / "samples.csv").string());
  CHECK(p.columns == std::vector<std::string>{"x", "y"});
  CHECK(p.rows.empty());
}

}  // TEST_SUITE
