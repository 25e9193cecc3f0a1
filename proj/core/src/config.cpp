#include "dsd/config.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>

#include "dsd/csv.hpp"
#include "dsd/errors.hpp"

namespace dsd::config {

using nlohmann::json;

namespace {

enum class Type { Number, Integer, String, Bool, NumberArray, IntArray, Matrix, Object };

struct Field {
  const char* name;
  Type type;
};

// Accepted keys per section; the root section is "".
const std::map<std::string, std::vector<Field>>& sections() {
  static const std::map<std::string, std::vector<Field>> s = {
      {"",
       {{"schema_version", Type::Integer}, {"kind", Type::String}, {"seed", Type::Integer},
        {"output_dir", Type::String}, {"plots", Type::Bool}, {"schedule", Type::Object},
        {"linear", Type::Object}, {"optimizer", Type::Object}, {"dataset", Type::Object},
        {"network", Type::Object}, {"train", Type::Object}, {"distill", Type::Object},
        {"sampling", Type::Object}, {"eval", Type::Object}, {"inputs", Type::Object}, {"sweep", Type::Object}}},
      {"schedule", {{"sigma_min", Type::Number}, {"sigma_max", Type::Number}}},
      {"linear", {{"d", Type::Integer}, {"r", Type::Integer}, {"sigma", Type::Number}, {"seeds", Type::Integer},
                  {"basis", Type::Matrix}}},
      {"optimizer", {{"step_size", Type::Number}, {"max_iters", Type::Integer}, {"grad_tol", Type::Number},
                     {"retraction", Type::String}, {"quad_points", Type::Integer}, {"armijo_c1", Type::Number},
                     {"min_step", Type::Number}, {"block_steps", Type::Bool}}},
      {"dataset", {{"kind", Type::String}, {"scale", Type::Number}, {"n", Type::Integer},
                   {"sigma_data", Type::Number}, {"reference_n", Type::Integer}}},
      {"network", {{"hidden", Type::IntArray}, {"precond", Type::String}, {"sigma_data", Type::Number}}},
      {"train", {{"mode", Type::String}, {"batch", Type::Integer}, {"lr", Type::Number}, {"beta1", Type::Number},
                 {"beta2", Type::Number}, {"eps", Type::Number}, {"cosine_decay", Type::Bool},
                 {"steps", Type::Integer}, {"sigma_hat", Type::Number}, {"weighting", Type::String}}},
      {"distill", {{"method", Type::String}, {"mode", Type::String}, {"alpha", Type::Number},
                   {"fake_lr", Type::Number}, {"gen_lr", Type::Number}, {"beta1", Type::Number},
                   {"beta2", Type::Number}, {"eps", Type::Number}, {"cosine_decay", Type::Bool},
                   {"steps", Type::Integer}, {"batch", Type::Integer}, {"fake_steps", Type::Integer},
                   {"sigma_hat", Type::Number}, {"generator_sigma", Type::Number}, {"weighting", Type::String},
                   {"fake_weighting", Type::String}, {"eval_every", Type::Integer}}},
      {"sampling", {{"steps", Type::Integer}, {"n", Type::Integer}, {"mode", Type::String}}},
      {"eval", {{"n_samples", Type::Integer}}},
      {"inputs", {{"teacher", Type::String}, {"generator", Type::String}, {"samples", Type::String}}},
      {"sweep", {{"sigma_hats", Type::NumberArray}}},
  };
  return s;
}

bool type_ok(const json& v, Type t) {
  switch (t) {
    case Type::Number: return v.is_number();
    case Type::Integer: return v.is_number_integer();
    case Type::String: return v.is_string();
    case Type::Bool: return v.is_boolean();
    case Type::Object: return v.is_object();
    case Type::NumberArray:
      if (!v.is_array()) return false;
      for (const json& e : v)
        if (!e.is_number()) return false;
      return true;
    case Type::IntArray:
      if (!v.is_array()) return false;
      for (const json& e : v)
        if (!e.is_number_integer()) return false;
      return true;
    case Type::Matrix:
      if (v.is_null()) return true;
      if (!v.is_array() || v.empty()) return false;
      for (const json& row : v) {
        if (!row.is_array() || row.size() != v.front().size() || row.empty()) return false;
        for (const json& e : row)
          if (!e.is_number()) return false;
      }
      return true;
  }
  return false;
}

const char* type_name(Type t) {
  switch (t) {
    case Type::Number: return "a number";
    case Type::Integer: return "an integer";
    case Type::String: return "a string";
    case Type::Bool: return "a boolean";
    case Type::Object: return "an object";
    case Type::NumberArray: return "an array of numbers";
    case Type::IntArray: return "an array of integers";
    case Type::Matrix: return "a rectangular array of number arrays or null";
  }
  return "?";
}

void check_section(const json& j, const std::string& section) {
  const std::string where = section.empty() ? "config" : section;
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const auto& fields = sections().at(section);
  for (const auto& [key, value] : j.items()) {
    const Field* f = nullptr;
    for (const Field& c : fields)
      if (key == c.name) f = &c;
    if (!f) throw ConfigError("unknown key '" + key + "' in " + where);
    if (!type_ok(value, f->type)) throw ConfigError(where + "." + key + " must be " + type_name(f->type));
    if (f->type == Type::Object) check_section(value, key);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const json& sub(const json& j, const char* key) {
  static const json empty = json::object();
  return j.contains(key) ? j.at(key) : empty;
}

std::string retraction_name(stiefel::Retraction r) { return r == stiefel::Retraction::Polar ? "polar" : "qr"; }

stiefel::Retraction retraction_from(const std::string& s) {
  if (s == "qr") return stiefel::Retraction::QR;
  if (s == "polar") return stiefel::Retraction::Polar;
  throw ConfigError("unknown retraction '" + s + "' (expected qr or polar)");
}

diffusion::SampleMode sample_mode_from(const std::string& s) {
  if (s == "full") return diffusion::SampleMode::Full;
  if (s == "truncated") return diffusion::SampleMode::Truncated;
  throw ConfigError("unknown sampling mode '" + s + "' (expected full or truncated)");
}

void validate(const ExperimentConfig& c) {
  static const std::set<std::string> kinds{"", "verify", "pretrain", "distill", "sample", "eval", "sigma-sweep"};
  if (!kinds.count(c.kind)) throw ConfigError("unknown experiment kind '" + c.kind + "'");
  c.schedule.validate();
  if (c.linear.d < 2 || c.linear.r < 1 || c.linear.r >= c.linear.d) throw ConfigError("linear: need 1 <= r < d");
  if (!(c.linear.sigma >= 0.0) || !std::isfinite(c.linear.sigma)) throw ConfigError("linear: sigma must be >= 0");
  if (c.linear.seeds < 1) throw ConfigError("linear: seeds must be >= 1");
  if (c.linear.basis && (c.linear.basis->rows() != c.linear.d || c.linear.basis->cols() != c.linear.r)) {
    throw ConfigError("linear: basis must be d x r");
  }
  if (c.optimizer.quad_points < 8) throw ConfigError("optimizer: quad_points must be >= 8");
  if (!(c.optimizer.step_size > 0.0) || !(c.optimizer.grad_tol > 0.0)) {
    throw ConfigError("optimizer: step_size and grad_tol must be positive");
  }
  if (c.optimizer.max_iters < 0) throw ConfigError("optimizer: max_iters must be >= 0");
  if (c.dataset.n < 256) throw ConfigError("dataset: n must be >= 256");
  if (!(c.dataset.scale > 0.0)) throw ConfigError("dataset: scale must be positive");
  if (!(c.dataset.sigma_data >= 0.0)) throw ConfigError("dataset: sigma_data must be >= 0");
  if (c.dataset.reference_n < 100) throw ConfigError("dataset: reference_n must be >= 100");
  if (c.network.hidden.empty()) throw ConfigError("network: need at least one hidden layer");
  for (int h : c.network.hidden)
    if (h < 1) throw ConfigError("network: hidden sizes must be >= 1");
  if (!(c.network.sigma_data >= 0.0)) throw ConfigError("network: sigma_data must be >= 0");
  c.train.validate();
  c.distill.validate();
  if (c.sampling.steps < 2) throw ConfigError("sampling: steps must be >= 2");
  if (c.sampling.n < 0) throw ConfigError("sampling: n must be >= 0");
  if (c.eval.n_samples < 100) throw ConfigError("eval: n_samples must be >= 100");
  for (double s : c.sweep_sigma_hats)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("sweep: sigma_hats must be finite and >= 0");
}

}  // namespace

double ExperimentConfig::network_sigma_data() const {
  return network.sigma_data > 0.0 ? network.sigma_data : dataset.scale / std::sqrt(2.0);
}

void ExperimentConfig::propagate() {
  train.schedule = schedule;
  distill.schedule = schedule;
  train.seed = seed;
  distill.seed = seed;
  optimizer.seed = seed;
}

ExperimentConfig from_json(const json& j) {
  check_section(j, "");
  if (j.contains("seed") && !j.at("seed").is_number_unsigned()) throw ConfigError("seed must be a nonnegative integer");
  if (j.contains("schema_version") && j.at("schema_version").get<int>() != kSchemaVersion) {
    throw ConfigError("unsupported schema_version " + j.at("schema_version").dump() + " (expected " +
                      std::to_string(kSchemaVersion) + ")");
  }
  ExperimentConfig c;
  try {
    read(j, "kind", c.kind);
    read(j, "seed", c.seed);
    read(j, "output_dir", c.output_dir);
    read(j, "plots", c.plots);

    const json& sch = sub(j, "schedule");
    read(sch, "sigma_min", c.schedule.sigma_min);
    read(sch, "sigma_max", c.schedule.sigma_max);

    const json& lin = sub(j, "linear");
    read(lin, "d", c.linear.d);
    read(lin, "r", c.linear.r);
    read(lin, "sigma", c.linear.sigma);
    read(lin, "seeds", c.linear.seeds);
    if (lin.contains("basis") && !lin.at("basis").is_null()) {
      const json& b = lin.at("basis");
      Mat m(static_cast<Eigen::Index>(b.size()), static_cast<Eigen::Index>(b.front().size()));
      for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t k = 0; k < b[i].size(); ++k) m(i, k) = b[i][k].get<double>();
      c.linear.basis = m;
    }

    const json& opt = sub(j, "optimizer");
    read(opt, "step_size", c.optimizer.step_size);
    read(opt, "max_iters", c.optimizer.max_iters);
    read(opt, "grad_tol", c.optimizer.grad_tol);
    if (opt.contains("retraction")) c.optimizer.retraction = retraction_from(opt.at("retraction").get<std::string>());
    read(opt, "quad_points", c.optimizer.quad_points);
    read(opt, "armijo_c1", c.optimizer.armijo_c1);
    read(opt, "min_step", c.optimizer.min_step);
    read(opt, "block_steps", c.optimizer.block_steps);

    const json& ds = sub(j, "dataset");
    if (ds.contains("kind")) c.dataset.kind = diffusion::toy_kind_from_string(ds.at("kind").get<std::string>());
    read(ds, "scale", c.dataset.scale);
    read(ds, "n", c.dataset.n);
    read(ds, "sigma_data", c.dataset.sigma_data);
    read(ds, "reference_n", c.dataset.reference_n);

    const json& net = sub(j, "network");
    read(net, "hidden", c.network.hidden);
    if (net.contains("precond")) c.network.precond = nn::precond_from_string(net.at("precond").get<std::string>());
    read(net, "sigma_data", c.network.sigma_data);

    const json& tr = sub(j, "train");
    if (tr.contains("mode")) c.train_mode = diffusion::train_mode_from_string(tr.at("mode").get<std::string>());
    read(tr, "batch", c.train.batch);
    read(tr, "lr", c.train.lr);
    read(tr, "beta1", c.train.beta1);
    read(tr, "beta2", c.train.beta2);
    read(tr, "eps", c.train.eps);
    read(tr, "cosine_decay", c.train.cosine_decay);
    read(tr, "steps", c.train.steps);
    read(tr, "sigma_hat", c.train.sigma_hat);
    if (tr.contains("weighting")) {
      c.train.weighting = diffusion::loss_weighting_from_string(tr.at("weighting").get<std::string>());
    }

    const json& di = sub(j, "distill");
    if (di.contains("method")) c.distill.method = distill::method_from_string(di.at("method").get<std::string>());
    if (di.contains("mode")) c.distill.mode = distill::consistency_from_string(di.at("mode").get<std::string>());
    read(di, "alpha", c.distill.alpha);
    read(di, "fake_lr", c.distill.fake_lr);
    read(di, "gen_lr", c.distill.gen_lr);
    read(di, "beta1", c.distill.beta1);
    read(di, "beta2", c.distill.beta2);
    read(di, "eps", c.distill.eps);
    read(di, "cosine_decay", c.distill.cosine_decay);
    read(di, "steps", c.distill.steps);
    read(di, "batch", c.distill.batch);
    read(di, "fake_steps", c.distill.fake_steps);
    read(di, "sigma_hat", c.distill.sigma_hat);
    read(di, "generator_sigma", c.distill.generator_sigma);
    if (di.contains("weighting")) {
      c.distill.weighting = distill::weighting_from_string(di.at("weighting").get<std::string>());
    }
    if (di.contains("fake_weighting")) {
      c.distill.fake_weighting = diffusion::loss_weighting_from_string(di.at("fake_weighting").get<std::string>());
    }
    read(di, "eval_every", c.distill.eval_every);

    const json& sa = sub(j, "sampling");
    read(sa, "steps", c.sampling.steps);
    read(sa, "n", c.sampling.n);
    if (sa.contains("mode")) c.sampling.mode = sample_mode_from(sa.at("mode").get<std::string>());

    read(sub(j, "eval"), "n_samples", c.eval.n_samples);

    const json& in = sub(j, "inputs");
    read(in, "teacher", c.inputs.teacher);
    read(in, "generator", c.inputs.generator);
    read(in, "samples", c.inputs.samples);

    read(sub(j, "sweep"), "sigma_hats", c.sweep_sigma_hats);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value out of range: ") + e.what());
  }
  c.propagate();
  validate(c);
  return c;
}

ExperimentConfig parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

ExperimentConfig load(const std::string& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse(text);
}

json to_json(const ExperimentConfig& c) {
  json basis = nullptr;
  if (c.linear.basis) {
    basis = json::array();
    for (Eigen::Index i = 0; i < c.linear.basis->rows(); ++i) {
      json row = json::array();
      for (Eigen::Index k = 0; k < c.linear.basis->cols(); ++k) row.push_back((*c.linear.basis)(i, k));
      basis.push_back(row);
    }
  }
  return json{
      {"schema_version", kSchemaVersion},
      {"kind", c.kind},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"plots", c.plots},
      {"schedule", {{"sigma_min", c.schedule.sigma_min}, {"sigma_max", c.schedule.sigma_max}}},
      {"linear", {{"d", c.linear.d}, {"r", c.linear.r}, {"sigma", c.linear.sigma}, {"seeds", c.linear.seeds},
                  {"basis", basis}}},
      {"optimizer", {{"step_size", c.optimizer.step_size}, {"max_iters", c.optimizer.max_iters},
                     {"grad_tol", c.optimizer.grad_tol}, {"retraction", retraction_name(c.optimizer.retraction)},
                     {"quad_points", c.optimizer.quad_points}, {"armijo_c1", c.optimizer.armijo_c1},
                     {"min_step", c.optimizer.min_step}, {"block_steps", c.optimizer.block_steps}}},
      {"dataset", {{"kind", diffusion::to_string(c.dataset.kind)}, {"scale", c.dataset.scale},
                   {"n", c.dataset.n}, {"sigma_data", c.dataset.sigma_data},
                   {"reference_n", c.dataset.reference_n}}},
      {"network", {{"hidden", c.network.hidden}, {"precond", nn::to_string(c.network.precond)},
                   {"sigma_data", c.network.sigma_data}}},
      {"train", {{"mode", diffusion::to_string(c.train_mode)}, {"batch", c.train.batch}, {"lr", c.train.lr},
                 {"beta1", c.train.beta1}, {"beta2", c.train.beta2}, {"eps", c.train.eps},
                 {"cosine_decay", c.train.cosine_decay},
                 {"steps", c.train.steps}, {"sigma_hat", c.train.sigma_hat},
                 {"weighting", diffusion::to_string(c.train.weighting)}}},
      {"distill", {{"method", distill::to_string(c.distill.method)},
                   {"mode", distill::to_string(c.distill.mode)},
                   {"alpha", c.distill.alpha},
                   {"fake_lr", c.distill.fake_lr},
                   {"gen_lr", c.distill.gen_lr},
                   {"beta1", c.distill.beta1},
                   {"beta2", c.distill.beta2},
                   {"eps", c.distill.eps},
                   {"cosine_decay", c.distill.cosine_decay},
                   {"steps", c.distill.steps},
                   {"batch", c.distill.batch},
                   {"fake_steps", c.distill.fake_steps},
                   {"sigma_hat", c.distill.sigma_hat},
                   {"generator_sigma", c.distill.generator_sigma},
                   {"weighting", distill::to_string(c.distill.weighting)},
                   {"fake_weighting", diffusion::to_string(c.distill.fake_weighting)},
                   {"eval_every", c.distill.eval_every}}},
      {"sampling", {{"steps", c.sampling.steps}, {"n", c.sampling.n},
                    {"mode", diffusion::to_string(c.sampling.mode)}}},
      {"eval", {{"n_samples", c.eval.n_samples}}},
      {"inputs", {{"teacher", c.inputs.teacher}, {"generator", c.inputs.generator},
                  {"samples", c.inputs.samples}}},
      {"sweep", {{"sigma_hats", c.sweep_sigma_hats}}},
  };
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  // Where results go and whether plots are drawn do not change any result.
  j.erase("output_dir");
  j.erase("plots");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json schema() {
  auto type_schema = [](Type t) -> json {
    switch (t) {
      case Type::Number: return {{"type", "number"}};
      case Type::Integer: return {{"type", "integer"}};
      case Type::String: return {{"type", "string"}};
      case Type::Bool: return {{"type", "boolean"}};
      case Type::NumberArray: return {{"type", "array"}, {"items", {{"type", "number"}}}};
      case Type::IntArray: return {{"type", "array"}, {"items", {{"type", "integer"}}}};
      case Type::Matrix:
        return {{"type", {"array", "null"}},
                {"items", {{"type", "array"}, {"items", {{"type", "number"}}}}}};
      case Type::Object: return {{"type", "object"}};
    }
    return json::object();
  };
  std::function<json(const std::string&)> object_schema = [&](const std::string& name) {
    json props = json::object();
    for (const Field& f : sections().at(name)) {
      props[f.name] = f.type == Type::Object ? object_schema(f.name) : type_schema(f.type);
    }
    return json{{"type", "object"}, {"additionalProperties", false}, {"properties", props}};
  };
  json root = object_schema("");
  root["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  root["title"] = "dsd experiment config";
  root["properties"]["schema_version"]["const"] = kSchemaVersion;
  return root;
}

}  // namespace dsd::config
