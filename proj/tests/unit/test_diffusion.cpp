#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dsd/diffusion.hpp"
#include "dsd/errors.hpp"
#include "helpers.hpp"

using namespace dsd;
using namespace dsd::diffusion;

namespace {

// D(x, sigma) = x through an unpreconditioned linear layer.
nn::Denoiser identity_denoiser() {
  nn::Denoiser den;
  den.net = nn::DenseNet({3, 2});
  den.precond = nn::Precond::None;
  den.net.params().setZero();
  den.net.params()(0) = 1.0;  // W(0,0)
  den.net.params()(4) = 1.0;  // W(1,1)
  return den;
}

nn::Denoiser small_net(std::uint64_t seed) {
  Rng rng(seed);
  return nn::make_denoiser(2, {16, 16}, nn::Precond::Edm, 0.5, rng);
}

bool bitwise_equal(const Vec& a, const Vec& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("toy datasets") {
  Rng rng(40);
  const ToyDataset ring = make_toy_dataset(ToyKind::Ring, 0.25, 4096, 0.05, rng);
  CHECK(ring.size() == 4096);
  const Vec radii = ring.clean.rowwise().norm();
  CHECK((radii.array() - 0.25).abs().maxCoeff() <= 1e-12);
  const double noise_var = (ring.points - ring.clean).squaredNorm() / (2.0 * 4096);
  CHECK(noise_var == doctest::Approx(0.0025).epsilon(0.05));
  Rng again(40);
  CHECK(make_toy_dataset(ToyKind::Ring, 0.25, 4096, 0.05, again).points == ring.points);
  CHECK_THROWS_AS(make_toy_dataset(ToyKind::Ring, 0.25, 255, 0.05, rng), PreconditionError);
  CHECK_THROWS_AS(make_toy_dataset(ToyKind::Ring, 0.25, 300, -0.1, rng), PreconditionError);
  for (ToyKind k : {ToyKind::Ring, ToyKind::Moons, ToyKind::Grid}) CHECK(toy_kind_from_string(to_string(k)) == k);
}

TEST_CASE("identity denoiser at a constant level") {
  const double s0 = 0.1;
  const NoiseSchedule s{s0, s0};
  Rng rng(41);
  const Mat batch = Mat::Zero(20000, 2);
  const LossResult res = standard_diffusion_loss(identity_denoiser(), batch, s, LossWeighting::Uniform, rng);
  CHECK(res.loss == doctest::Approx(2.0 * s0 * s0).epsilon(0.03));
}

TEST_CASE("ambient loss with sigma_hat = 0 reduces to the standard loss") {
  const nn::Denoiser den = small_net(42);
  Rng data_rng(43);
  const ToyDataset ds = make_toy_dataset(ToyKind::Ring, 0.25, 512, 0.05, data_rng);
  const NoiseSchedule s;
  for (LossWeighting w : {LossWeighting::Uniform, LossWeighting::Edm}) {
    Rng a(44), b(44);
    const LossResult std_loss = standard_diffusion_loss(den, ds.points, s, w, a);
    const LossResult amb_loss = ambient_tweedie_loss(den, ds.points, 0.0, s, w, b);
    CHECK(std::memcmp(&std_loss.loss, &amb_loss.loss, sizeof(double)) == 0);
    CHECK(bitwise_equal(std_loss.grad, amb_loss.grad));
    CHECK(bitwise_equal(std_loss.per_sample, amb_loss.per_sample));
  }
}

TEST_CASE("samples at the clip carry zero loss") {
  const nn::Denoiser den = small_net(45);
  Rng rng(46);
  Mat batch(64, 2);
  for (Eigen::Index i = 0; i < batch.size(); ++i) batch.data()[i] = rng.normal();
  const NoiseDraw draw = draw_noise(64, 2, NoiseSchedule{}, rng);
  const double sigma_hat = 0.3;
  const LossResult res = ambient_tweedie_loss(den, batch, sigma_hat, draw, LossWeighting::Edm, true);
  int clipped = 0;
  for (Eigen::Index i = 0; i < 64; ++i) {
    if (draw.sigma(i) <= sigma_hat) {
      ++clipped;
      CHECK(res.per_sample(i) == 0.0);
    } else {
      CHECK(res.per_sample(i) > 0.0);
    }
  }
  CHECK(clipped > 0);

  SUBCASE("generic evaluator agrees under uniform weighting") {
    const LossResult u = ambient_tweedie_loss(den, batch, sigma_hat, draw, LossWeighting::Uniform, false);
    const double v = ambient_loss_value([&](const Mat& x, double s) { return den.forward(x, s); }, batch, sigma_hat, draw);
    CHECK(u.loss == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("loss gradient matches finite differences") {
  const nn::Denoiser den = small_net(47);
  Rng rng(48);
  Mat batch(8, 2);
  for (Eigen::Index i = 0; i < batch.size(); ++i) batch.data()[i] = 0.3 * rng.normal();
  const NoiseDraw draw = draw_noise(8, 2, NoiseSchedule{}, rng);
  const LossResult res = ambient_tweedie_loss(den, batch, 0.1, draw, LossWeighting::Edm, true);
  const auto f = [&](const Vec& p) {
    nn::Denoiser copy = den;
    copy.net.params() = p;
    return ambient_tweedie_loss(copy, batch, 0.1, draw, LossWeighting::Edm, false).loss;
  };
  CHECK(test::rel_error(res.grad, test::fd_gradient(f, den.net.params(), 1e-6)) <= 1e-5);
}

TEST_CASE("pretraining") {
  Rng data_rng(49);
  const ToyDataset ds = make_toy_dataset(ToyKind::Ring, 0.25, 1024, 0.05, data_rng);
  TrainConfig cfg;
  cfg.batch = 64;
  cfg.steps = 0;
  nn::Denoiser den = small_net(50);
  const std::uint64_t before = den.net.hash();
  CHECK(pretrain(den, ds, cfg, TrainMode::Ambient).loss_curve.empty());
  CHECK(den.net.hash() == before);

  cfg.steps = 50;
  nn::Denoiser a = small_net(50), b = small_net(50), c = small_net(50);
  pretrain(a, ds, cfg, TrainMode::Ambient);
  pretrain(b, ds, cfg, TrainMode::Ambient);
  CHECK(a.net.params() == b.net.params());
  cfg.seed = 1;
  pretrain(c, ds, cfg, TrainMode::Ambient);
  CHECK(c.net.params() != a.net.params());

  cfg.lr = 1e9;
  cfg.steps = 200;
  nn::Denoiser d = small_net(51);
  CHECK_THROWS_AS(pretrain(d, ds, cfg, TrainMode::Standard), DivergenceError);
}

TEST_CASE("sampling grid") {
  const NoiseSchedule s{0.02, 5.0};
  const auto g = sampling_grid(s, 10);
  REQUIRE(g.size() == 10);
  CHECK(g.front() == 5.0);
  CHECK(g.back() == 0.02);
  for (std::size_t k = 1; k + 1 < g.size(); ++k) CHECK(g[k] / g[k - 1] == doctest::Approx(g[k + 1] / g[k]));
  CHECK_THROWS_AS(sampling_grid(s, 1), PreconditionError);
}

TEST_CASE("zero denoiser contracts by sigma_min / sigma_max") {
  const NoiseSchedule s{0.02, 5.0};
  const DenoiseFn zero = [](const Mat& x, double) { return Mat::Zero(x.rows(), x.cols()); };
  const Rng rng(52);
  const Mat start = ambient_sample([](const Mat& x, double) { return x; }, 0.0, 32, SampleMode::Full, 16, s, rng);
  const Mat end = ambient_sample(zero, 0.0, 32, SampleMode::Full, 16, s, rng);
  for (Eigen::Index i = 0; i < 16; ++i) {
    CHECK(end.row(i).norm() == doctest::Approx(0.02 / 5.0 * start.row(i).norm()).epsilon(1e-10));
  }
}

TEST_CASE("truncated sampling") {
  const NoiseSchedule s{0.02, 5.0};
  const Rng rng(53);
  int calls = 0;
  const DenoiseFn counting = [&](const Mat& x, double) {
    ++calls;
    return Mat(0.5 * x);
  };
  SUBCASE("sigma_hat above sigma_max is a one-step denoise") {
    const Mat out = ambient_sample(counting, 6.0, 32, SampleMode::Truncated, 4, s, rng);
    CHECK(calls == 1);
    const Mat start = ambient_sample([](const Mat& x, double) { return x; }, 0.0, 32, SampleMode::Full, 4, s, rng);
    CHECK((out - 0.5 * start).cwiseAbs().maxCoeff() <= 1e-15);
  }
  SUBCASE("stops at the first level below sigma_hat") {
    const auto g = sampling_grid(s, 32);
    const double sigma_hat = 0.3;
    int k = 0;
    while (!(g[k + 1] < sigma_hat)) ++k;
    ambient_sample(counting, sigma_hat, 32, SampleMode::Truncated, 4, s, rng);
    CHECK(calls == k + 1);
  }
  SUBCASE("sigma_hat = 0 runs the full chain") {
    const Mat a = ambient_sample(counting, 0.0, 32, SampleMode::Truncated, 4, s, rng);
    const Mat b = ambient_sample(counting, 0.0, 32, SampleMode::Full, 4, s, rng);
    CHECK(a == b);
  }
  CHECK(ambient_sample(counting, 0.0, 8, SampleMode::Full, 0, s, rng).rows() == 0);
}

TEST_CASE("linear posterior-mean denoiser recovers the data covariance") {
  // Data N(0, E E^T) in 2-D with E E^T = diag(0.5, 0.1); the exact denoiser is
  // linear: D(x, s) = C (C + s^2 I)^{-1} x.
  Mat cov = Mat::Zero(2, 2);
  cov(0, 0) = 0.5;
  cov(1, 1) = 0.1;
  const DenoiseFn exact = [&](const Mat& x, double s) {
    const Mat k = cov * (cov + s * s * Mat::Identity(2, 2)).inverse();
    return Mat(x * k.transpose());
  };
  const NoiseSchedule s{0.002, 10.0};
  const Rng rng(54);
  const Mat x128 = ambient_sample(exact, 0.0, 128, SampleMode::Full, 20000, s, rng);
  const Mat x64 = ambient_sample(exact, 0.0, 64, SampleMode::Full, 20000, s, rng);
  const Mat c128 = x128.transpose() * x128 / 20000.0;
  const Mat c64 = x64.transpose() * x64 / 20000.0;
  CHECK((c128 - cov).cwiseAbs().maxCoeff() <= 0.1);
  CHECK((c128 - c64).cwiseAbs().maxCoeff() <= 0.05);
}

}  // TEST_SUITE
