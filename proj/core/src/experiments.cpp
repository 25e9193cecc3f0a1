#include "dsd/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "dsd/checkpoint.hpp"
#include "dsd/csv.hpp"
#include "dsd/errors.hpp"
#include "dsd/gaussian.hpp"
#include "dsd/linear_theory.hpp"
#include "dsd/stiefel.hpp"
#include "dsd/svg.hpp"

namespace dsd::experiments {

namespace fs = std::filesystem;

namespace {

// Stream tags under Rng(seed).
constexpr std::uint64_t kTagDataset = 100;
constexpr std::uint64_t kTagReference = 101;
constexpr std::uint64_t kTagInit = 102;
constexpr std::uint64_t kTagSampling = 103;
constexpr std::uint64_t kTagLatent = 104;
constexpr std::uint64_t kTagProximal = 105;
constexpr std::uint64_t kTagTheory = 200;

constexpr Eigen::Index kPlotPoints = 2000;

std::string out_dir(const config::ExperimentConfig& cfg) {
  if (cfg.output_dir.empty()) throw ConfigError("output directory is not set");
  return cfg.output_dir;
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

io::Stamp stamp_of(const config::ExperimentConfig& cfg) { return {config::config_hash(cfg), cfg.seed, ""}; }

// Metric tables say what the Frechet numbers are computed on.
io::Stamp metric_stamp(const config::ExperimentConfig& cfg) {
  return {config::config_hash(cfg), cfg.seed, "frechet: gaussian fit on raw 2-D coordinates (no feature network)"};
}

void write_config(const config::ExperimentConfig& cfg, const std::string& dir) {
  io::atomic_write(join(dir, "config.json"), config::to_json(cfg).dump(2) + "\n");
}

Mat head_rows(const Mat& m, Eigen::Index k) { return m.topRows(std::min(k, m.rows())); }

std::string input_or(const std::string& given, const std::string& dir, const std::string& name) {
  return given.empty() ? join(dir, name) : given;
}

Mat random_orthogonal(Eigen::Index r, Rng& rng) {
  Mat g(r, r);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < r; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(g);
  return qr.householderQ() * Mat::Identity(r, r);
}

Check make_check(std::string name, double value, double target, double tol) {
  return {std::move(name), value, target, tol, std::isfinite(value) && std::abs(value - target) <= tol};
}

// Largest |structured inverse - dense inverse| over the columns of I.
double woodbury_error(const gauss::LowRankGaussian& g) {
  const gauss::StructuredInverse inv = gauss::structured_inverse(g);
  const Mat dense = g.dense_covariance().inverse();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < g.dim(); ++i) {
    const Vec e = Vec::Unit(g.dim(), i);
    worst = std::max(worst, (inv.apply(g.factor, e) - dense.col(i)).cwiseAbs().maxCoeff());
  }
  return worst;
}

linear::GeneratorParams perturb(const linear::GeneratorParams& p, double scale, Rng& rng) {
  Mat du(p.u.rows(), p.u.cols());
  Mat dv(p.v.rows(), p.v.cols());
  for (Eigen::Index i = 0; i < du.size(); ++i) du.data()[i] = scale * rng.normal();
  for (Eigen::Index i = 0; i < dv.size(); ++i) dv.data()[i] = scale * rng.normal();
  return {stiefel::retract(p.u, stiefel::tangent_project(p.u, du), 1.0, stiefel::Retraction::QR), p.v + dv};
}

linear::LinearModel theory_model(const config::ExperimentConfig& cfg, Rng& rng) {
  const auto& lin = cfg.linear;
  if (!lin.basis) return linear::random_model(lin.d, lin.r, lin.sigma, rng);
  try {
    return {*lin.basis, lin.sigma};
  } catch (const PreconditionError& e) {
    throw ConfigError(std::string("linear.basis: ") + e.what());
  }
}

void log_report(std::ostream& log, const metrics::MetricReport& r) {
  log << "  " << r.label << ": frechet_to_clean=" << io::format_double(r.frechet_to_clean)
      << " proximal_fid=" << io::format_double(r.proximal_fid) << "\n";
}

}  // namespace

std::vector<Check> verify_theory(const config::ExperimentConfig& cfg) {
  Rng root = Rng(cfg.seed).split(kTagTheory);
  Rng model_rng = root.split(1);
  const linear::LinearModel m = theory_model(cfg, model_rng);
  const auto d = m.dim();
  const auto r = m.rank();
  const double sigma = m.sigma;
  const double s2 = sigma * sigma;
  const NoiseSchedule& sched = cfg.schedule;
  const int quad = cfg.optimizer.quad_points;
  std::vector<Check> out;

  Rng wood_rng = root.split(2);
  double wood = 0.0;
  for (int k = 0; k < 10; ++k) {
    const Eigen::Index dk = 2 + static_cast<Eigen::Index>(wood_rng.below(19));
    const Eigen::Index rk = 1 + static_cast<Eigen::Index>(wood_rng.below(static_cast<std::uint64_t>(dk - 1)));
    const linear::LinearModel rand = linear::random_model(dk, rk, 0.0, wood_rng);
    wood = std::max(wood, woodbury_error({rand.basis, wood_rng.uniform(0.1, 3.0), wood_rng.uniform(0.05, 2.0)}));
  }
  out.push_back(make_check("woodbury_vs_dense", wood, 0.0, 1e-10));

  const double w2_noisy = gauss::w2_commuting(m.noisy(), m.clean());
  const double bures = metrics::bures_squared(m.noisy().dense_covariance(), m.clean().dense_covariance());
  out.push_back(make_check("w2_vs_bures", w2_noisy - bures, 0.0, 1e-9));
  const double root1 = std::sqrt(1.0 + s2) - 1.0;
  out.push_back(make_check("w2_noisy_clean", w2_noisy,
                           static_cast<double>(r) * root1 * root1 + static_cast<double>(d - r) * s2, 1e-9));

  Rng q_rng = root.split(3);
  const linear::GeneratorParams star = linear::analytic_minimizer(m, random_orthogonal(r, q_rng));
  const linear::WassersteinReport wr = linear::wasserstein_report(m, star);
  out.push_back(make_check("w2_gap", wr.gap, static_cast<double>(d - r) * s2, 1e-9));
  out.push_back(make_check("w2_distilled_clean", wr.w2_distilled_clean,
                           wr.w2_noisy_clean - static_cast<double>(d - r) * s2, 1e-9));

  const stiefel::Gradient g =
      stiefel::riemannian_gradient(star.u, stiefel::euclidean_gradient(m, star, sched, quad));
  const double gnorm = stiefel::gradient_norm(g);
  out.push_back({"minimizer_gradient_norm", gnorm, 0.0, 1e-7, gnorm <= 1e-7});
  const double loss_star = linear::loss_closed_form(m, star, sched, quad);
  Rng pert_rng = root.split(4);
  double min_rise = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 50; ++k) {
    const linear::GeneratorParams p = perturb(star, 1e-2, pert_rng);
    if (!linear::is_feasible(p)) continue;
    min_rise = std::min(min_rise, linear::loss_closed_form(m, p, sched, quad) - loss_star);
  }
  out.push_back({"minimizer_local_optimality", min_rise, 0.0, 0.0, min_rise >= 0.0});

  Rng mc_rng = root.split(5);
  double worst_z = 0.0;
  for (int k = 0; k < 3; ++k) {
    const linear::GeneratorParams p = stiefel::random_init(d, r, mc_rng);
    const double cf = linear::loss_closed_form(m, p, sched, quad);
    const linear::MonteCarloEstimate mc = linear::loss_monte_carlo(m, p, sched, 100000, mc_rng);
    worst_z = std::max(worst_z, std::abs(cf - mc.estimate) / mc.std_error);
  }
  out.push_back({"closed_form_vs_monte_carlo_stderr", worst_z, 0.0, 4.0, worst_z <= 4.0});

  Rng tr_rng = root.split(6);
  Mat a(r, r);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = tr_rng.normal();
  const Mat sigma_rr = a * a.transpose() + 0.1 * Mat::Identity(r, r);
  double excess = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < 100; ++k) {
    const Mat u = stiefel::random_init(d, r, tr_rng).u;
    excess = std::max(excess, linear::pca_trace(m.basis, sigma_rr, u) - sigma_rr.trace());
  }
  out.push_back({"trace_bound_excess", excess, 0.0, 1e-12, excess <= 1e-12});
  const bool attained = linear::trace_maximizer_check(m.basis, sigma_rr, m.basis * random_orthogonal(r, tr_rng));
  out.push_back({"trace_maximizer_attained", attained ? 1.0 : 0.0, 1.0, 0.0, attained});

  // f_sigma is convex in u with f' < 0 below the minimizer; bisect on a
  // central-difference derivative.
  const auto fprime = [&](double u) {
    const double h = 1e-4 * u;
    return (linear::f_sigma(u + h, sigma, sched, quad) - linear::f_sigma(u - h, sigma, sched, quad)) / (2.0 * h);
  };
  double lo = 1e-3;
  double hi = 4.0 * (1.0 + s2);
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (fprime(mid) < 0.0 ? lo : hi) = mid;
  }
  out.push_back(make_check("f_sigma_minimizer", 0.5 * (lo + hi), 1.0 + s2, 1e-6));
  double min_curv = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 200; ++k) {
    const double u = 0.1 + (5.0 * (1.0 + s2) - 0.1) * k / 199.0;
    const double h = 1e-3;
    const double c = (linear::f_sigma(u + h, sigma, sched, quad) - 2.0 * linear::f_sigma(u, sigma, sched, quad) +
                      linear::f_sigma(u - h, sigma, sched, quad)) /
                     (h * h);
    min_curv = std::min(min_curv, c);
  }
  out.push_back({"f_sigma_convexity_min", min_curv, 0.0, 0.0, min_curv > 0.0});

  const int seeds = cfg.linear.seeds;
  int converged = 0;
  for (int k = 0; k < seeds; ++k) {
    Rng init_rng = root.split(1000 + static_cast<std::uint64_t>(k));
    stiefel::OptConfig oc = cfg.optimizer;
    oc.seed = cfg.seed + static_cast<std::uint64_t>(k);
    const stiefel::OptResult res = stiefel::optimize(m, stiefel::random_init(d, r, init_rng), sched, oc);
    if (res.converged) ++converged;
  }
  const double need = std::ceil(0.9 * seeds);
  out.push_back({"optimizer_converged_runs", static_cast<double>(converged), need, 0.0, converged >= need});
  return out;
}

ToyData make_toy_data(const config::ExperimentConfig& cfg) {
  const Rng root(cfg.seed);
  Rng data_rng = root.split(kTagDataset);
  Rng ref_rng = root.split(kTagReference);
  const auto& ds = cfg.dataset;
  ToyData t;
  t.data = diffusion::make_toy_dataset(ds.kind, ds.scale, ds.n, ds.sigma_data, data_rng);
  t.clean_fit = gauss::fit_gaussian(diffusion::sample_clean(ds.kind, ds.scale, ds.reference_n, ref_rng));
  t.noisy_fit = gauss::fit_gaussian(t.data.points);
  return t;
}

nn::Denoiser make_network(const config::ExperimentConfig& cfg) {
  Rng rng = Rng(cfg.seed).split(kTagInit);
  return nn::make_denoiser(2, cfg.network.hidden, cfg.network.precond, cfg.network_sigma_data(), rng);
}

metrics::MetricReport score(const std::string& label, const Mat& samples, const ToyData& toy, double sigma_hat,
                            std::uint64_t seed) {
  Rng prox = Rng(seed).split(kTagProximal);
  metrics::MetricReport r;
  r.label = label;
  r.frechet_to_clean = metrics::frechet_samples(samples, toy.clean_fit);
  r.proximal_fid = metrics::proximal_fid(samples, sigma_hat, toy.noisy_fit, prox);
  r.w2_gaussian_fit = metrics::bures_squared(gauss::fit_gaussian(samples).cov, toy.clean_fit.cov);
  r.n_samples = static_cast<long>(samples.rows());
  r.seed = seed;
  return r;
}

Mat generator_samples(const nn::Denoiser& gen, double sigma_g, long n, std::uint64_t seed) {
  Rng rng = Rng(seed).split(kTagLatent);
  Mat z(n, gen.data_dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  if (n == 0) return z;
  return distill::generate(gen, sigma_g, z);
}

distill::EvalHook make_eval_hook(const ToyData& toy, const config::ExperimentConfig& cfg) {
  Rng rng = Rng(cfg.seed).split(kTagLatent);
  Mat z(cfg.eval.n_samples, 2);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  const double sigma_hat = cfg.distill.sigma_hat;
  const std::uint64_t seed = cfg.seed;
  const gauss::GaussianFit clean = toy.clean_fit;
  const gauss::GaussianFit noisy = toy.noisy_fit;
  return [z, sigma_hat, seed, clean, noisy](const distill::DistillState& st) {
    const Mat x = distill::generate(st.generator, st.generator_sigma, z);
    Rng prox = Rng(seed).split(kTagProximal);
    distill::EvalResult r;
    r.frechet_clean = metrics::frechet_samples(x, clean);
    r.proximal_fid = metrics::proximal_fid(x, sigma_hat, noisy, prox);
    return r;
  };
}

bool Fig4Result::ordering_holds() const {
  const double g = generator.frechet_to_clean;
  const double t = teacher_truncated.frechet_to_clean;
  const double f = teacher_full.frechet_to_clean;
  const double n = noisy.frechet_to_clean;
  return g < t && g < f && t < n && f < n;
}

bool Fig4Result::chain_holds() const {
  return generator.frechet_to_clean < teacher_truncated.frechet_to_clean &&
         teacher_truncated.frechet_to_clean < teacher_full.frechet_to_clean &&
         teacher_full.frechet_to_clean < noisy.frechet_to_clean;
}

Fig4Result fig4_table(const ToyData& toy, const nn::Denoiser& teacher, const nn::Denoiser* generator,
                      double sigma_g, const config::ExperimentConfig& cfg) {
  const double sigma_hat = cfg.train.sigma_hat;
  const long n = cfg.eval.n_samples;
  const Rng srng = Rng(cfg.seed).split(kTagSampling);
  Fig4Result out;
  out.noisy = score("noisy_data", toy.data.points, toy, sigma_hat, cfg.seed);
  const Mat trunc = diffusion::ambient_sample(teacher, sigma_hat, cfg.sampling.steps,
                                              diffusion::SampleMode::Truncated, n, cfg.train.schedule, srng);
  out.teacher_truncated = score("teacher_truncated", trunc, toy, sigma_hat, cfg.seed);
  const Mat full = diffusion::ambient_sample(teacher, sigma_hat, cfg.sampling.steps, diffusion::SampleMode::Full,
                                             n, cfg.train.schedule, srng);
  out.teacher_full = score("teacher_full", full, toy, sigma_hat, cfg.seed);
  if (generator != nullptr) {
    out.generator = score("generator", generator_samples(*generator, sigma_g, n, cfg.seed), toy, sigma_hat, cfg.seed);
  } else {
    out.generator.label = "generator";
    out.generator.frechet_to_clean = std::numeric_limits<double>::quiet_NaN();
    out.generator.proximal_fid = std::numeric_limits<double>::quiet_NaN();
    out.generator.w2_gaussian_fit = std::numeric_limits<double>::quiet_NaN();
    out.generator.seed = cfg.seed;
  }
  return out;
}

int cmd_verify(const config::ExperimentConfig& cfg, std::ostream& log) {
  const std::string dir = out_dir(cfg);
  const std::vector<Check> checks = verify_theory(cfg);
  io::CsvTable table({"check", "value", "target", "tolerance", "pass"});
  bool all = true;
  for (const Check& c : checks) {
    table.add_row({c.name, io::format_double(c.value), io::format_double(c.target), io::format_double(c.tolerance),
                   c.pass ? "1" : "0"});
    log << (c.pass ? "PASS " : "FAIL ") << c.name << " value=" << io::format_double(c.value) << "\n";
    all = all && c.pass;
  }
  const io::Stamp st = stamp_of(cfg);
  table.write(join(dir, "report.csv"), &st);
  write_config(cfg, dir);
  log << "wrote " << join(dir, "report.csv") << "\n";
  return all ? kPass : kPropertyFailure;
}

int cmd_pretrain(const config::ExperimentConfig& cfg, std::ostream& log) {
  const std::string dir = out_dir(cfg);
  const io::Stamp st = stamp_of(cfg);
  const ToyData toy = make_toy_data(cfg);
  io::write_points(join(dir, "dataset.csv"), toy.data.points, &st);
  io::write_points(join(dir, "clean.csv"), toy.data.clean, &st);
  write_config(cfg, dir);

  nn::Denoiser den = make_network(cfg);
  log << "pretrain: " << cfg.train.steps << " steps, mode " << diffusion::to_string(cfg.train_mode)
      << ", sigma_hat " << io::format_double(cfg.train.sigma_hat) << "\n";
  diffusion::PretrainResult res;
  try {
    res = diffusion::pretrain(den, toy.data, cfg.train, cfg.train_mode);
  } catch (const DivergenceError& e) {
    const std::string path = join(dir, "teacher_diverged.json");
    checkpoint::save({den, cfg.train, cfg.train_mode, e.step(), 0.0}, path, &st);
    log << e.what() << "\nlast checkpoint: " << path << "\n";
    return kDivergence;
  }
  io::CsvTable curve({"step", "loss"});
  for (std::size_t k = 0; k < res.loss_curve.size(); ++k) {
    curve.add_row(std::vector<double>{static_cast<double>(k), res.loss_curve[k]});
  }
  curve.write(join(dir, "loss_curve.csv"), &st);
  checkpoint::save({den, cfg.train, cfg.train_mode, cfg.train.steps, 0.0}, join(dir, "teacher.json"), &st);
  log << "wrote " << join(dir, "teacher.json") << "\n";
  if (cfg.plots) {
    const Mat samples = diffusion::ambient_sample(den, cfg.train.sigma_hat, cfg.sampling.steps, cfg.sampling.mode,
                                                  kPlotPoints, cfg.train.schedule, Rng(cfg.seed).split(kTagSampling));
    svg::emit_scatter_svg({{"noisy data", head_rows(toy.data.points, kPlotPoints)},
                           {"teacher " + diffusion::to_string(cfg.sampling.mode), samples}},
                          join(dir, "pretrain.svg"), "pretraining");
  }
  return kPass;
}

int cmd_distill(const config::ExperimentConfig& cfg, std::ostream& log) {
  const std::string dir = out_dir(cfg);
  const io::Stamp st = stamp_of(cfg);
  const io::Stamp mst = metric_stamp(cfg);
  const std::string teacher_path = input_or(cfg.inputs.teacher, dir, "teacher.json");
  const checkpoint::Checkpoint teacher = checkpoint::load(teacher_path);
  const ToyData toy = make_toy_data(cfg);
  write_config(cfg, dir);

  distill::DistillState state = distill::init_distillation(teacher.denoiser, teacher.mode, cfg.distill);
  const distill::EvalHook base = make_eval_hook(toy, cfg);
  const std::string ckpt_dir = join(dir, "checkpoints");
  const auto save_generator = [&](const nn::Denoiser& gen, long step, const std::string& path) {
    checkpoint::save({gen, teacher.train, teacher.mode, step, state.generator_sigma}, path, &st);
  };
  const distill::EvalHook hook = [&](const distill::DistillState& s) {
    const distill::EvalResult r = base(s);
    char name[48];
    std::snprintf(name, sizeof name, "generator_%08ld.json", s.step);
    save_generator(s.generator, s.step, join(ckpt_dir, name));
    log << "  step " << s.step << " frechet_clean=" << io::format_double(r.frechet_clean)
        << " proximal_fid=" << io::format_double(r.proximal_fid) << "\n";
    return r;
  };
  const auto write_history = [&] {
    io::CsvTable table({"step", "frechet_clean", "proximal_fid", "fake_loss", "gen_grad_norm"});
    for (const distill::MetricRow& row : state.history) {
      table.add_row(std::vector<double>{static_cast<double>(row.step), row.frechet_clean, row.proximal_fid,
                                        row.fake_loss, row.gen_grad_norm});
    }
    table.write(join(dir, "history.csv"), &mst);
  };

  log << "distill: " << distill::to_string(cfg.distill.method) << ", " << cfg.distill.steps << " steps, mode "
      << distill::to_string(cfg.distill.mode) << "\n";
  try {
    distill::run_distillation(state, cfg.distill, hook);
  } catch (const distill::DistillDivergence& e) {
    write_history();
    const std::string path = join(dir, "generator_last_healthy.json");
    save_generator(e.last_healthy(), e.healthy_step(), path);
    log << e.what() << "\nlast checkpoint: " << path << "\n";
    return kDivergence;
  }
  write_history();
  save_generator(state.generator, state.step, join(dir, "generator.json"));

  const metrics::Selection sel = metrics::select_best_checkpoint(state.history);
  std::vector<double> pfid, fr;
  for (const distill::MetricRow& row : state.history) {
    if (std::isnan(row.proximal_fid)) continue;
    pfid.push_back(row.proximal_fid);
    fr.push_back(row.frechet_clean);
  }
  const double rho = pfid.size() >= 2 ? metrics::spearman(pfid, fr) : std::numeric_limits<double>::quiet_NaN();
  io::CsvTable seltab({"selected_step", "proximal_fid", "frechet_at_selected", "frechet_min", "frechet_min_step",
                       "relative_gap", "spearman", "checkpoints"});
  seltab.add_row(std::vector<double>{static_cast<double>(sel.step), sel.proximal_fid, sel.frechet_at_selected,
                                     sel.frechet_min, static_cast<double>(sel.frechet_min_step), sel.relative_gap(),
                                     rho, static_cast<double>(pfid.size())});
  seltab.write(join(dir, "selection.csv"), &mst);

  const Mat samples = generator_samples(state.generator, state.generator_sigma, cfg.sampling.n, cfg.seed);
  io::write_points(join(dir, "samples.csv"), samples, &st);
  log << "selected step " << sel.step << " (frechet " << io::format_double(sel.frechet_at_selected) << ", run min "
      << io::format_double(sel.frechet_min) << "), spearman " << io::format_double(rho) << "\n";
  log << "wrote " << join(dir, "generator.json") << "\n";
  if (cfg.plots) {
    svg::emit_scatter_svg({{"noisy data", head_rows(toy.data.points, kPlotPoints)},
                           {"generator", head_rows(samples, kPlotPoints)}},
                          join(dir, "distill.svg"), "distillation");
  }
  return kPass;
}

int cmd_sample(const config::ExperimentConfig& cfg, std::ostream& log) {
  const std::string dir = out_dir(cfg);
  const io::Stamp st = stamp_of(cfg);
  const long n = cfg.sampling.n;
  bool use_generator = !cfg.inputs.generator.empty();
  if (!use_generator && cfg.inputs.teacher.empty()) use_generator = fs::exists(join(dir, "generator.json"));
  Mat samples;
  if (use_generator) {
    const std::string path = input_or(cfg.inputs.generator, dir, "generator.json");
    const checkpoint::Checkpoint ck = checkpoint::load(path);
    if (!(ck.generator_sigma > 0.0)) throw IoError(path + " is not a generator checkpoint");
    samples = generator_samples(ck.denoiser, ck.generator_sigma, n, cfg.seed);
    log << "sample: " << n << " one-step draws from " << path << "\n";
  } else {
    const std::string path = input_or(cfg.inputs.teacher, dir, "teacher.json");
    const checkpoint::Checkpoint ck = checkpoint::load(path);
    samples = diffusion::ambient_sample(ck.denoiser, ck.train.sigma_hat, cfg.sampling.steps, cfg.sampling.mode, n,
                                        ck.train.schedule, Rng(cfg.seed).split(kTagSampling));
    log << "sample: " << n << " " << diffusion::to_string(cfg.sampling.mode) << " draws from " << path << "\n";
  }
  io::write_points(join(dir, "samples.csv"), samples, &st);
  write_config(cfg, dir);
  if (cfg.plots) svg::emit_scatter_svg({{"samples", head_rows(samples, kPlotPoints)}}, join(dir, "samples.svg"));
  return kPass;
}

int cmd_eval(const config::ExperimentConfig& cfg, std::ostream& log) {
  const std::string dir = out_dir(cfg);
  const io::Stamp st = stamp_of(cfg);
  const io::Stamp mst = metric_stamp(cfg);
  const checkpoint::Checkpoint teacher = checkpoint::load(input_or(cfg.inputs.teacher, dir, "teacher.json"));
  const std::string gen_path = input_or(cfg.inputs.generator, dir, "generator.json");
  std::optional<checkpoint::Checkpoint> gen;
  if (!cfg.inputs.generator.empty() || fs::exists(gen_path)) gen = checkpoint::load(gen_path);
  const ToyData toy = make_toy_data(cfg);

  config::ExperimentConfig ec = cfg;
  ec.train.sigma_hat = teacher.train.sigma_hat;
  ec.train.schedule = teacher.train.schedule;
  const Fig4Result f = fig4_table(toy, teacher.denoiser, gen ? &gen->denoiser : nullptr,
                                  gen ? gen->generator_sigma : 0.0, ec);
  io::CsvTable table(metrics::report_columns());
  std::vector<const metrics::MetricReport*> rows{&f.noisy, &f.teacher_truncated, &f.teacher_full};
  if (gen) rows.push_back(&f.generator);
  for (const auto* r : rows) {
    metrics::append_report(table, *r);
    log_report(log, *r);
  }
  if (!cfg.inputs.samples.empty()) {
    const metrics::MetricReport r = score("samples", io::read_points(cfg.inputs.samples), toy,
                                          teacher.train.sigma_hat, cfg.seed);
    metrics::append_report(table, r);
    log_report(log, r);
  }
  table.write(join(dir, "eval.csv"), &mst);

  io::CsvTable order({"ordering", "holds"});
  const bool fig4 = gen && f.ordering_holds();
  const bool chain = gen && f.chain_holds();
  order.add_row(std::vector<std::string>{"generator_below_both_teachers_below_noisy", fig4 ? "1" : "0"});
  order.add_row(std::vector<std::string>{"generator_truncated_full_noisy", chain ? "1" : "0"});
  order.write(join(dir, "ordering.csv"), &mst);
  write_config(cfg, dir);
  log << "ordering generator < teachers < noisy: " << (fig4 ? "holds" : "does not hold") << "\n";
  if (cfg.plots) {
    const Rng srng = Rng(cfg.seed).split(kTagSampling);
    std::vector<svg::PointSet> sets{
        {"noisy data", head_rows(toy.data.points, kPlotPoints)},
        {"truncated", diffusion::ambient_sample(teacher.denoiser, teacher.train.sigma_hat, cfg.sampling.steps,
                                                diffusion::SampleMode::Truncated, kPlotPoints,
                                                teacher.train.schedule, srng)},
        {"full", diffusion::ambient_sample(teacher.denoiser, teacher.train.sigma_hat, cfg.sampling.steps,
                                           diffusion::SampleMode::Full, kPlotPoints, teacher.train.schedule, srng)}};
    if (gen) sets.push_back({"generator", generator_samples(gen->denoiser, gen->generator_sigma, kPlotPoints, cfg.seed)});
    svg::emit_scatter_svg(sets, join(dir, "eval.svg"), "noisy data, teacher and generator");
  }
  return kPass;
}

int cmd_sigma_sweep(const config::ExperimentConfig& cfg, std::ostream& log) {
  const std::string dir = out_dir(cfg);
  const io::Stamp st = stamp_of(cfg);
  const io::Stamp mst = metric_stamp(cfg);
  std::vector<double> levels = cfg.sweep_sigma_hats;
  if (levels.empty()) {
    const double sd = cfg.dataset.sigma_data;
    levels = {0.0, sd, 2.0 * sd};
  }
  struct SubRun {
    config::ExperimentConfig cfg;
    std::ostringstream log;
    int code = kPass;
    metrics::MetricReport report;
  };
  std::vector<SubRun> runs(levels.size());
  for (std::size_t i = 0; i < levels.size(); ++i) {
    SubRun& r = runs[i];
    r.cfg = cfg;
    r.cfg.kind.clear();
    r.cfg.inputs = {};
    r.cfg.train.sigma_hat = levels[i];
    r.cfg.distill.sigma_hat = levels[i];
    r.cfg.output_dir = join(dir, "sigma_hat_" + io::format_double(levels[i]));
  }
  const auto body = [](SubRun& r) {
    std::ostringstream err;
    r.code = run_command("pretrain", r.cfg, r.log, err);
    if (r.code == kPass) r.code = run_command("distill", r.cfg, r.log, err);
    if (r.code == kPass) {
      const checkpoint::Checkpoint gen = checkpoint::load(join(r.cfg.output_dir, "generator.json"));
      const ToyData toy = make_toy_data(r.cfg);
      r.report = score("sigma_hat_" + io::format_double(r.cfg.distill.sigma_hat),
                       generator_samples(gen.denoiser, gen.generator_sigma, r.cfg.eval.n_samples, r.cfg.seed), toy,
                       r.cfg.distill.sigma_hat, r.cfg.seed);
    }
    r.log << err.str();
  };
  std::vector<std::thread> workers;
  for (SubRun& r : runs) workers.emplace_back(body, std::ref(r));
  for (std::thread& w : workers) w.join();

  std::size_t best = runs.size();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].code != kPass) continue;
    if (best == runs.size() || runs[i].report.frechet_to_clean < runs[best].report.frechet_to_clean) best = i;
  }
  io::CsvTable table({"sigma_hat", "frechet_to_clean", "proximal_fid", "w2_gaussian_fit", "exit_code", "best"});
  int code = kPass;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const SubRun& r = runs[i];
    log << "[sigma_hat=" << io::format_double(levels[i]) << "]\n" << r.log.str();
    const bool ok = r.code == kPass;
    table.add_row(std::vector<double>{levels[i], ok ? r.report.frechet_to_clean : nan,
                                      ok ? r.report.proximal_fid : nan, ok ? r.report.w2_gaussian_fit : nan,
                                      static_cast<double>(r.code), i == best ? 1.0 : 0.0});
    code = std::max(code, r.code);
  }
  table.write(join(dir, "sweep.csv"), &mst);
  write_config(cfg, dir);
  if (best < runs.size()) log << "lowest frechet_to_clean at sigma_hat=" << io::format_double(levels[best]) << "\n";
  return code;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"verify", "pretrain", "distill", "sample", "eval", "sigma-sweep"};
  return names;
}

int run_command(const std::string& name, const config::ExperimentConfig& cfg, std::ostream& log, std::ostream& err) {
  using Fn = int (*)(const config::ExperimentConfig&, std::ostream&);
  static const std::map<std::string, Fn> table{{"verify", cmd_verify},   {"pretrain", cmd_pretrain},
                                               {"distill", cmd_distill}, {"sample", cmd_sample},
                                               {"eval", cmd_eval},       {"sigma-sweep", cmd_sigma_sweep}};
  const auto it = table.find(name);
  if (it == table.end()) {
    err << "error: unknown command '" << name << "'\n";
    return kUsageError;
  }
  try {
    if (!cfg.kind.empty() && cfg.kind != name) {
      throw ConfigError("config kind '" + cfg.kind + "' does not match command '" + name + "'");
    }
    return it->second(cfg, log);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kDivergence;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const InsufficientDataError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kPropertyFailure;
  }
}

}  // namespace dsd::experiments
