#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dsd/distill.hpp"
#include "dsd/errors.hpp"
#include "helpers.hpp"

using namespace dsd;
using namespace dsd::distill;
using diffusion::TrainMode;

namespace {

nn::Denoiser teacher_net(std::uint64_t seed) {
  Rng rng(seed);
  return nn::make_denoiser(2, {16, 16}, nn::Precond::Edm, 0.5, rng);
}

DistillConfig small_config(Method m) {
  DistillConfig cfg;
  cfg.method = m;
  cfg.batch = 6;
  cfg.steps = 4;
  cfg.eval_every = 2;
  cfg.fake_lr = 1e-3;
  cfg.gen_lr = 1e-3;
  return cfg;
}

// Distillation state whose fake net has drifted away from the teacher.
DistillState drifted_state(const DistillConfig& cfg, std::uint64_t seed) {
  DistillState st = init_distillation(teacher_net(seed), required_teacher_mode(cfg.mode), cfg);
  Rng rng(seed + 1000);
  for (Eigen::Index i = 0; i < st.fake.net.param_count(); ++i) st.fake.net.params()(i) += 0.05 * rng.normal();
  for (Eigen::Index i = 0; i < st.generator.net.param_count(); ++i) st.generator.net.params()(i) += 0.05 * rng.normal();
  return st;
}

// Unpreconditioned net with zero weights: D(x, sigma) = c.
nn::Denoiser constant_net(double c0, double c1) {
  nn::Denoiser den;
  den.net = nn::DenseNet({3, 4, 2});
  den.precond = nn::Precond::None;
  const Eigen::Index n = den.net.param_count();
  den.net.params()(n - 2) = c0;
  den.net.params()(n - 1) = c1;
  return den;
}

bool same_bits(const Vec& a, const Vec& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST_SUITE("distill") {

TEST_CASE("score and noise conversions") {
  Mat f(1, 2), x(1, 2);
  f << 0.5, -1.0;
  x << 1.5, 1.0;
  const Mat s = score_from_mean(f, x, 0.5);
  CHECK(s(0, 0) == doctest::Approx(-4.0));
  CHECK(s(0, 1) == doctest::Approx(-8.0));
  const Mat e = eps_from_score(s, 0.5);
  CHECK(e(0, 0) == doctest::Approx(2.0));
  CHECK(e(0, 1) == doctest::Approx(4.0));
  // x = f + sigma eps round trip.
  CHECK(((f + 0.5 * e) - x).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK_THROWS_AS(score_from_mean(f, x, 0.0), DomainError);
}

TEST_CASE("initialization copies the teacher") {
  const DistillConfig cfg = small_config(Method::SiD);
  const nn::Denoiser t = teacher_net(60);
  const DistillState st = init_distillation(t, TrainMode::Ambient, cfg);
  CHECK(st.fake.net.params() == t.net.params());
  CHECK(st.generator.net.params() == t.net.params());
  CHECK_THROWS_AS(init_distillation(t, TrainMode::Standard, cfg), ConfigError);
  DistillConfig std_cfg = cfg;
  std_cfg.mode = Consistency::Standard;
  CHECK_NOTHROW(init_distillation(t, TrainMode::Standard, std_cfg));
}

TEST_CASE("estimators vanish when the fake net equals the teacher") {
  for (Method m : {Method::SiD, Method::DMD}) {
    const DistillConfig cfg = small_config(m);
    DistillState st = init_distillation(teacher_net(61), TrainMode::Ambient, cfg);
    Rng rng(62);
    for (Eigen::Index i = 0; i < st.generator.net.param_count(); ++i) st.generator.net.params()(i) += 0.05 * rng.normal();
    const GeneratorDraw draw = draw_generator_batch(cfg.batch, 2, cfg.schedule, rng);
    const EstimatorOutput out = generator_grad(st, draw, cfg);
    CHECK(out.grad.isZero(0.0));
    CHECK(out.grad_x.isZero(0.0));
  }
}

TEST_CASE("SDS vanishes under a perfect noise prediction") {
  DistillConfig cfg = small_config(Method::SDS);
  cfg.weighting = Weighting::Constant;
  DistillState st = init_distillation(constant_net(0.3, -0.2), TrainMode::Ambient, cfg);
  Rng rng(63);
  const GeneratorDraw draw = draw_generator_batch(cfg.batch, 2, cfg.schedule, rng);
  const EstimatorOutput out = generator_grad(st, draw, cfg);
  CHECK(out.grad_x.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("estimator gradients match finite differences") {
  for (Consistency mode : {Consistency::Adjusted, Consistency::Standard}) {
    for (Method m : {Method::SDS, Method::DMD, Method::SiD}) {
      CAPTURE(static_cast<int>(m));
      CAPTURE(static_cast<int>(mode));
      DistillConfig cfg = small_config(m);
      cfg.mode = mode;
      const DistillState st = drifted_state(cfg, 64);
      Rng rng(65);
      const GeneratorDraw draw = draw_generator_batch(cfg.batch, 2, cfg.schedule, rng);
      const EstimatorOutput out = generator_grad(st, draw, cfg);
      const auto f = [&](const Vec& p) {
        DistillState copy = st;
        copy.generator.net.params() = p;
        return m == Method::SiD ? sid_objective(copy, draw, cfg, out.weights)
                                : surrogate_objective(copy, draw, out.grad_x);
      };
      CHECK(test::rel_error(out.grad, test::fd_gradient(f, st.generator.net.params(), 1e-6)) <= 1e-5);
    }
  }
}

TEST_CASE("DMD is antisymmetric in the two nets") {
  const DistillConfig cfg = small_config(Method::DMD);
  DistillState st = drifted_state(cfg, 66);
  Rng rng(67);
  const GeneratorDraw draw = draw_generator_batch(cfg.batch, 2, cfg.schedule, rng);
  DistillConfig fixed = cfg;
  fixed.weighting = Weighting::Sigma2;
  const EstimatorOutput a = generator_grad(st, draw, fixed);
  std::swap(st.teacher, st.fake);
  const EstimatorOutput b = generator_grad(st, draw, fixed);
  CHECK((a.grad_x + b.grad_x).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("SiD objective at alpha = 1") {
  DistillConfig cfg = small_config(Method::SiD);
  cfg.alpha = 1.0;
  const DistillState st = drifted_state(cfg, 68);
  Rng rng(69);
  const GeneratorDraw draw = draw_generator_batch(cfg.batch, 2, cfg.schedule, rng);
  const Vec w = Vec::Ones(cfg.batch);
  const Mat xg = generate(st.generator, st.generator_sigma, draw.z);
  const Mat xt = xg + (draw.eps.array().colwise() * draw.sigma.array()).matrix();
  const Mat fp = st.teacher.forward(xt, draw.sigma), fq = st.fake.forward(xt, draw.sigma);
  double hand = 0.0;
  for (int i = 0; i < cfg.batch; ++i) hand += (fp.row(i) - fq.row(i)).dot(fq.row(i) - xg.row(i));
  CHECK(sid_objective(st, draw, cfg, w) == doctest::Approx(hand / cfg.batch).epsilon(1e-12));
}

TEST_CASE("training loop") {
  SUBCASE("call order") {
    DistillConfig cfg = small_config(Method::SiD);
    cfg.fake_steps = 2;
    cfg.steps = 2;
    DistillState st = init_distillation(teacher_net(70), TrainMode::Ambient, cfg);
    st.log_calls = true;
    run_distillation(st, cfg, nullptr);
    CHECK(st.call_log == std::vector<std::string>{"fake_update", "fake_update", "generator_update", "fake_update",
                                                  "fake_update", "generator_update"});
    cfg.method = Method::SDS;
    DistillState sds = init_distillation(teacher_net(70), TrainMode::Ambient, cfg);
    sds.log_calls = true;
    run_distillation(sds, cfg, nullptr);
    CHECK(sds.call_log == std::vector<std::string>{"generator_update", "generator_update"});
  }
  SUBCASE("zero steps evaluates once and changes nothing") {
    DistillConfig cfg = small_config(Method::SiD);
    cfg.steps = 0;
    DistillState st = init_distillation(teacher_net(71), TrainMode::Ambient, cfg);
    const Vec before = st.generator.net.params();
    int evals = 0;
    run_distillation(st, cfg, [&](const DistillState&) {
      ++evals;
      return EvalResult{1.0, 1.0};
    });
    CHECK(evals == 1);
    CHECK(st.history.size() == 1);
    CHECK(st.generator.net.params() == before);
  }
  SUBCASE("evaluation schedule, teacher frozen") {
    DistillConfig cfg = small_config(Method::DMD);
    cfg.steps = 5;
    DistillState st = init_distillation(teacher_net(72), TrainMode::Ambient, cfg);
    const std::uint64_t th = st.teacher.net.hash();
    run_distillation(st, cfg, [](const DistillState&) { return EvalResult{0.5, 0.5}; });
    std::vector<long> steps;
    for (const auto& r : st.history) steps.push_back(r.step);
    CHECK(steps == std::vector<long>{0, 2, 4, 5});
    CHECK(st.teacher.net.hash() == th);
    CHECK(st.generator.net.hash() != th);
  }
  SUBCASE("zero learning rate leaves the generator unchanged") {
    DistillConfig cfg = small_config(Method::SiD);
    cfg.gen_lr = 0.0;
    DistillState st = init_distillation(teacher_net(73), TrainMode::Ambient, cfg);
    const Vec before = st.generator.net.params();
    run_distillation(st, cfg, nullptr);
    CHECK(st.generator.net.params() == before);
  }
  SUBCASE("non-finite evaluation raises divergence with the last healthy generator") {
    DistillConfig cfg = small_config(Method::SiD);
    DistillState st = init_distillation(teacher_net(74), TrainMode::Ambient, cfg);
    const Vec start = st.generator.net.params();
    int calls = 0;
    const EvalHook hook = [&](const DistillState&) {
      return ++calls == 1 ? EvalResult{1.0, 1.0} : EvalResult{NAN, NAN};
    };
    try {
      run_distillation(st, cfg, hook);
      FAIL("expected divergence");
    } catch (const DistillDivergence& e) {
      CHECK(e.healthy_step() == 0);
      CHECK(e.last_healthy().net.params() == start);
    }
  }
}

TEST_CASE("adjusted mode with sigma_hat = 0 matches standard mode bit for bit") {
  for (Method m : {Method::SiD, Method::DMD, Method::SDS}) {
    DistillConfig adj = small_config(m);
    adj.sigma_hat = 0.0;
    adj.steps = 3;
    DistillConfig std_cfg = adj;
    std_cfg.mode = Consistency::Standard;
    DistillState a = init_distillation(teacher_net(75), TrainMode::Ambient, adj);
    DistillState b = init_distillation(teacher_net(75), TrainMode::Standard, std_cfg);
    run_distillation(a, adj, nullptr);
    run_distillation(b, std_cfg, nullptr);
    CHECK(same_bits(a.generator.net.params(), b.generator.net.params()));
    CHECK(same_bits(a.fake.net.params(), b.fake.net.params()));
  }
}

TEST_CASE("inverse solve") {
  const nn::Denoiser gen = teacher_net(76);
  const double sg = 0.5;
  Vec z_true(2);
  z_true << 0.4, -0.7;
  const Vec x_true = generate(gen, sg, z_true.transpose()).row(0).transpose();
  const Mat a = Mat::Identity(2, 2);
  const Vec y = a * x_true;
  Vec z0 = z_true;
  z0(0) += 0.3;
  const InverseResult res = inverse_solve(gen, sg, a, y, z0, 3000, 0.01);
  CHECK(res.residual <= 1e-4);
  CHECK((a * res.x - y).norm() == doctest::Approx(res.residual));

  const InverseResult none = inverse_solve(gen, sg, a, y, z0, 0);
  CHECK(none.z == z0);
  CHECK(none.best_step == 0);
  CHECK_THROWS_AS(inverse_solve(gen, sg, Mat::Identity(3, 3), y, z0), PreconditionError);
  CHECK_THROWS_AS(inverse_solve(gen, sg, a, y, Vec::Zero(3)), PreconditionError);
}

}  // TEST_SUITE
