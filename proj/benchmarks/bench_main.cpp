#include <benchmark/benchmark.h>

#include "dsd/diffusion.hpp"
#include "dsd/distill.hpp"
#include "dsd/gaussian.hpp"
#include "dsd/linear_theory.hpp"
#include "dsd/net.hpp"
#include "dsd/stiefel.hpp"

using namespace dsd;

namespace {

Mat gaussian_mat(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

void BM_NetForward(benchmark::State& state) {
  Rng rng(1);
  const nn::Denoiser den = nn::make_denoiser(2, {64, 64, 64}, nn::Precond::Edm, 0.18, rng);
  const Mat x = gaussian_mat(state.range(0), 2, rng);
  const Vec sigma = Vec::Constant(state.range(0), 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(den.forward(x, sigma));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_NetForward)->Arg(256)->Arg(4096);

void BM_NetForwardBackward(benchmark::State& state) {
  Rng rng(2);
  const nn::Denoiser den = nn::make_denoiser(2, {64, 64, 64}, nn::Precond::Edm, 0.18, rng);
  const Mat x = gaussian_mat(state.range(0), 2, rng);
  const Vec sigma = Vec::Constant(state.range(0), 0.5);
  const Mat up = gaussian_mat(state.range(0), 2, rng);
  Vec grad = Vec::Zero(den.net.param_count());
  for (auto _ : state) {
    nn::Denoiser::Cache cache;
    den.forward(x, sigma, &cache);
    benchmark::DoNotOptimize(den.backward(cache, up, &grad));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_NetForwardBackward)->Arg(256);

void BM_AmbientLoss(benchmark::State& state) {
  Rng rng(3);
  const nn::Denoiser den = nn::make_denoiser(2, {64, 64, 64}, nn::Precond::Edm, 0.18, rng);
  const Mat batch = 0.25 * gaussian_mat(256, 2, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        diffusion::ambient_tweedie_loss(den, batch, 0.05, NoiseSchedule{}, diffusion::LossWeighting::Edm, rng));
  }
}
BENCHMARK(BM_AmbientLoss);

void BM_SidGeneratorGrad(benchmark::State& state) {
  Rng rng(4);
  const nn::Denoiser teacher = nn::make_denoiser(2, {64, 64, 64}, nn::Precond::Edm, 0.18, rng);
  distill::DistillConfig cfg;
  const distill::DistillState st = distill::init_distillation(teacher, diffusion::TrainMode::Ambient, cfg);
  const distill::GeneratorDraw draw = distill::draw_generator_batch(cfg.batch, 2, cfg.schedule, rng);
  for (auto _ : state) benchmark::DoNotOptimize(distill::generator_grad(st, draw, cfg));
}
BENCHMARK(BM_SidGeneratorGrad);

void BM_JacobiEigen(benchmark::State& state) {
  Rng rng(5);
  const Mat g = gaussian_mat(state.range(0), state.range(0), rng);
  const Mat a = g + g.transpose();
  for (auto _ : state) benchmark::DoNotOptimize(gauss::symmetric_eigen(a));
}
BENCHMARK(BM_JacobiEigen)->Arg(8)->Arg(32);

void BM_ClosedFormLoss(benchmark::State& state) {
  Rng rng(6);
  const Eigen::Index d = state.range(0);
  const linear::LinearModel m = linear::random_model(d, 2, 0.5, rng);
  const linear::GeneratorParams p = stiefel::random_init(d, 2, rng);
  for (auto _ : state) benchmark::DoNotOptimize(linear::loss_closed_form(m, p, NoiseSchedule{}));
}
BENCHMARK(BM_ClosedFormLoss)->Arg(8)->Arg(64);

void BM_EuclideanGradient(benchmark::State& state) {
  Rng rng(7);
  const linear::LinearModel m = linear::random_model(8, 2, 0.5, rng);
  const linear::GeneratorParams p = stiefel::random_init(8, 2, rng);
  for (auto _ : state) benchmark::DoNotOptimize(stiefel::euclidean_gradient(m, p, NoiseSchedule{}));
}
BENCHMARK(BM_EuclideanGradient);

}  // namespace
BENCHMARK_MAIN();
