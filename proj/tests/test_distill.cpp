#include <catch2/catch_amalgamated.hpp>

#include "geoflow/distill.hpp"
#include "geoflow/path.hpp"

using namespace geoflow;

namespace {

ConditionedDensity bridge_density(bool uniform_uncond = true, double covy = 0.2) {
  GaussianMixture comps{{0.5, 0.5},
                        {Vec{-2.0, 0.0}, Vec{2.0, 0.0}},
                        {Vec{1.2, covy}, Vec{1.2, covy}}};
  return ConditionedDensity::from_labeled({0, 1}, comps, uniform_uncond);
}

/// Single label whose conditional equals the unconditional, so the
/// guided score and potential cancel bitwise: the flat guided metric.
ConditionedDensity flat_guided_density() {
  GaussianMixture m{{1.0}, {Vec{0.0, 0.0}}, {Vec{1e6, 1e6}}};
  ConditionedDensity cd;
  cd.conditionals = {m};
  cd.label_weights = {1.0};
  cd.unconditional = m;
  return cd;
}

DistillConfig fast_config() {
  DistillConfig cfg;
  cfg.tau = 0.1;
  cfg.teacher_lr = 5e-3;
  cfg.student_lr = 5e-2;
  cfg.t_grid_size = 6;
  cfg.epochs = 40;
  cfg.ode_steps = 20;
  return cfg;
}

double mean_path_residual(const std::vector<Vec>& nodes, const GaussianMixture& m) {
  const auto r = el_residual(DiscretePath{nodes}, m);
  double s = 0.0;
  for (double v : r) s += v;
  return s / (static_cast<double>(r.size()) - 2.0);
}

}  // namespace

TEST_CASE("time sampler produces stratified interior samples") {
  CounterRng rng(1);
  const auto one = time_sampler(1, rng);
  REQUIRE(one.size() == 1);
  CHECK(one[0] > 0.25);
  CHECK(one[0] < 0.75);

  CounterRng rng2(2);
  const auto fixed = time_sampler(3, rng2, /*jitter=*/0.0);
  CHECK(fixed == std::vector<double>{0.25, 0.5, 0.75});

  CounterRng rng3(3);
  for (int n : {1, 2, 5, 17, 64}) {
    const auto ts = time_sampler(n, rng3);
    for (std::size_t j = 0; j < ts.size(); ++j) {
      CHECK(ts[j] > 0.0);
      CHECK(ts[j] < 1.0);
      if (j > 0) CHECK(ts[j] > ts[j - 1]);  // strata do not overlap
    }
  }
}

TEST_CASE("teacher step is a bit-exact no-op under the flat guided metric") {
  const auto cd = flat_guided_density();
  auto teacher = CorrectorNet::create(2, {16, 16}, Activation::silu, 3);
  const Vec params_before = teacher.params;
  PairedSample s;
  s.x0 = {-1.0, 0.2};
  s.x1 = {1.5, -0.4};
  s.c0 = {1.0};
  s.c1 = {1.0};
  auto cfg = fast_config();
  const auto batch = make_distill_batch(s, cd, cfg);
  const auto report = teacher_step(teacher, cd, batch, cfg, {0.3, 0.5, 0.7});
  CHECK(report.loss == 0.0);
  CHECK(report.mean_g_norm == 0.0);
  CHECK(teacher.params == params_before);
}

TEST_CASE("teacher update obeys the frozen-g stop-gradient structure") {
  // With a single fixed t, the step must equal -lr * J^T g with g held
  // constant, J the Jacobian of z_t wrt the teacher parameters.
  const auto cd = bridge_density();
  auto teacher = CorrectorNet::create(2, {1}, Activation::tanh, 5);
  CounterRng prng(8);
  for (auto& p : teacher.params) p = prng.normal() * 0.3;
  PairedSample s;
  s.x0 = {-1.8, 0.4};
  s.x1 = {2.1, -0.3};
  s.c0 = {1.0, 0.0};
  s.c1 = {0.0, 1.0};
  auto cfg = fast_config();
  cfg.teacher_lr = 1e-3;
  cfg.grad_clip = 1e9;  // isolate the raw update rule
  const auto batch = make_distill_batch(s, cd, cfg);
  const double t = 0.4;

  // Recompute the g the step will freeze.
  const double abar = cfg.schedule.alpha_bar(cfg.tau);
  const Jet jet = interpolant_jet(teacher, batch.z0, batch.z1, t);
  const Vec c_t = lerp(batch.c0, batch.c1, t);
  const Vec s_t = guided_score(cd, jet.value, c_t, cfg.beta, abar);
  const double speed = norm(jet.d1);
  const double proj = dot(jet.d1, s_t) / (speed * speed);
  const double pref =
      -1.0 / (std::exp(log_guided_density(cd, jet.value, c_t, cfg.beta, abar)) * speed);
  Vec g(2);
  for (int j = 0; j < 2; ++j)
    g[j] = pref * ((s_t[j] - proj * jet.d1[j]) + jet.d2[j] / (speed * speed));

  // Finite-difference J^T g of <g, z_t(xi)> with g frozen.
  const Vec params_before = teacher.params;
  Vec expected_grad(teacher.params.size());
  const double h = 1e-7;
  for (std::size_t i = 0; i < teacher.params.size(); ++i) {
    auto tp = teacher, tm = teacher;
    tp.params[i] += h;
    tm.params[i] -= h;
    const Vec zp = add(lerp(batch.z0, batch.z1, t), corrector_eval(tp, batch.z0, batch.z1, t));
    const Vec zm = add(lerp(batch.z0, batch.z1, t), corrector_eval(tm, batch.z0, batch.z1, t));
    expected_grad[i] = (dot(g, zp) - dot(g, zm)) / (2 * h);
  }

  teacher_step(teacher, cd, batch, cfg, {t});
  for (std::size_t i = 0; i < teacher.params.size(); ++i) {
    const double delta = teacher.params[i] - params_before[i];
    CHECK(delta == Catch::Approx(-cfg.teacher_lr * expected_grad[i]).margin(1e-10));
  }
}

TEST_CASE("doubling the frozen g doubles the step, direction unchanged") {
  CounterRng rng(4);
  const MlpSpec spec{3, {6}, 2, Activation::tanh, 7};
  Vec params = init_params(spec);
  for (auto& p : params) p = rng.normal() * 0.4;
  const Vec in{0.2, -0.5, 0.4};
  const Vec g{0.7, -1.1};
  auto grad_for = [&](double scale) {
    Tape tape;
    const auto p = tape.param(params);
    const auto out = mlp_forward_tape(tape, spec, p, tape.input(in));
    const auto loss = tape.dot(tape.stop_grad(tape.input(geoflow::scale(g, scale))), out);
    tape.backward(loss);
    return tape.grad(p);
  };
  const Vec g1 = grad_for(1.0);
  const Vec g2 = grad_for(2.0);
  double cos_num = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    CHECK(g2[i] == Catch::Approx(2.0 * g1[i]).margin(1e-14));
    cos_num += g1[i] * g2[i];
    n1 += g1[i] * g1[i];
    n2 += g2[i] * g2[i];
  }
  CHECK(cos_num / std::sqrt(n1 * n2) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("zero student's initial loss equals the mean lerp-to-target error") {
  const auto cd = bridge_density();
  auto teacher = CorrectorNet::create(2, {8}, Activation::silu, 2);
  CounterRng prng(3);
  for (auto& p : teacher.params) p = prng.normal() * 0.5;
  auto student = CorrectorNet::create(2, {8}, Activation::silu, 9);
  PairedSample s;
  s.x0 = {-2.2, 0.3};
  s.x1 = {1.9, -0.6};
  s.c0 = {1.0, 0.0};
  s.c1 = {0.0, 1.0};
  auto cfg = fast_config();
  const auto batch = make_distill_batch(s, cd, cfg);
  const std::vector<double> times{0.25, 0.5, 0.75};
  double expected = 0.0;
  for (double t : times) {
    const Vec z_t = add(lerp(batch.z0, batch.z1, t), corrector_eval(teacher, batch.z0, batch.z1, t));
    const Vec target = pf_ode_backward(cd, z_t, lerp(batch.c0, batch.c1, t), cfg.tau, cfg.ode_steps);
    expected += norm_sq(sub(lerp(s.x0, s.x1, t), target)) / 2.0 / times.size();
  }
  const auto report = student_step(student, teacher, cd, batch, cfg, times);
  CHECK(report.loss == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("near-flat density: targets are linear interpolants, student converges") {
  // Zero teacher + near-flat conditional: the PF-ODE is a pure scaling,
  // so backward(lerp(z0,z1,t)) is the ambient lerp.
  const auto cd = flat_guided_density();
  auto teacher = CorrectorNet::create(2, {8}, Activation::silu, 1);
  auto student = CorrectorNet::create(2, {8}, Activation::silu, 2);
  PairedSample s;
  s.x0 = {-0.8, 0.5};
  s.x1 = {1.2, -0.7};
  s.c0 = {1.0};
  s.c1 = {1.0};
  auto cfg = fast_config();
  const auto batch = make_distill_batch(s, cd, cfg);
  for (double t : {0.2, 0.5, 0.8}) {
    const Vec z_t = lerp(batch.z0, batch.z1, t);
    const Vec target = pf_ode_backward(cd, z_t, lerp(batch.c0, batch.c1, t), cfg.tau, cfg.ode_steps);
    CHECK(norm(sub(target, lerp(s.x0, s.x1, t))) < 1e-3);
  }
  double last = 0.0;
  for (int step = 0; step < 30; ++step)
    last = student_step(student, teacher, cd, batch, cfg, {0.2, 0.5, 0.8}).loss;
  CHECK(last < 1e-4);
}

TEST_CASE("distill_run: constant density fixes both correctors at zero") {
  const auto cd = flat_guided_density();
  CounterRng rng(6);
  GaussianMixture sampler{{0.5, 0.5}, {Vec{-1.0, 0.0}, Vec{1.0, 0.0}}, {Vec{0.3, 0.3}, Vec{0.3, 0.3}}};
  Dataset ds;
  ds.dim = 2;
  ds.cond_dim = 1;
  for (int i = 0; i < 4; ++i) {
    PairedSample s;
    s.x0 = {rng.normal() - 1.0, rng.normal() * 0.4};
    s.x1 = {rng.normal() + 1.0, rng.normal() * 0.4};
    s.c0 = {1.0};
    s.c1 = {1.0};
    ds.items.push_back(s);
  }
  auto cfg = fast_config();
  cfg.epochs = 20;
  const auto result = distill_run(ds, cd, cfg, 31, {16, 16});
  CounterRng probe(9);
  for (int rep = 0; rep < 10; ++rep) {
    const Vec x0 = probe.normal_vec(2), x1 = probe.normal_vec(2);
    const double t = probe.uniform(0.05, 0.95);
    const Vec xt = add(lerp(x0, x1, t), corrector_eval(result.student, x0, x1, t));
    CHECK(norm(sub(xt, lerp(x0, x1, t))) < 1e-3);
  }
}

TEST_CASE("distill_run history is bit-identical across equal seeds") {
  const auto cd = bridge_density();
  CounterRng r1(5);
  auto ds = make_gmm_bridge_task(3, cd, r1);
  auto cfg = fast_config();
  cfg.epochs = 5;
  const auto a = distill_run(ds, cd, cfg, 77, {16, 16});
  const auto b = distill_run(ds, cd, cfg, 77, {16, 16});
  CHECK(a.history.teacher_loss == b.history.teacher_loss);
  CHECK(a.history.student_loss == b.history.student_loss);
  CHECK(a.history.action == b.history.action);
  CHECK(a.teacher.params == b.teacher.params);
  CHECK(a.student.params == b.student.params);
}

TEST_CASE("teacher drives the smoothed action below the linear interpolant's") {
  const auto cd = bridge_density();
  CounterRng rng(5);
  auto ds = make_gmm_bridge_task(4, cd, rng);
  auto cfg = fast_config();
  cfg.epochs = 120;
  const auto result = distill_run(ds, cd, cfg, 11, {32, 32});
  const auto zero = CorrectorNet::create(2, {8}, Activation::silu, 99);
  double linear_action = 0.0, teacher_action = 0.0;
  for (const auto& s : ds.items) {
    const auto batch = make_distill_batch(s, cd, cfg);
    linear_action += smoothed_action(zero, batch, cd, cfg);
    teacher_action += smoothed_action(result.teacher, batch, cd, cfg);
  }
  CHECK(teacher_action < linear_action);
}

TEST_CASE("distilled student stays within 10% of the node-based geodesic action") {
  const auto cd = bridge_density();
  const auto ambient = cd.conditional_mixture(Vec{1.0, 1.0});
  CounterRng rng(5);
  auto ds = make_gmm_bridge_task(6, cd, rng);
  auto cfg = fast_config();
  cfg.epochs = 600;
  cfg.t_grid_size = 8;
  cfg.jitter = 0.0;  // deterministic grid: epoch losses are exactly comparable
  cfg.phase = DistillConfig::Phase::phased;
  const auto result = distill_run(ds, cd, cfg, 11, {64, 64});
  // With the teacher frozen in the student phase, the faithfulness MSE
  // decreases monotonically from its first epoch.
  const std::size_t phase2 = static_cast<std::size_t>(cfg.epochs);
  for (std::size_t e = phase2 + 1; e < phase2 + 10; ++e)
    CHECK(result.history.student_loss[e] < result.history.student_loss[e - 1] + 1e-9);
  const int G = 32;
  for (const auto& s : ds.items) {
    std::vector<Vec> nodes;
    for (int i = 0; i <= G; ++i) {
      const double t = static_cast<double>(i) / G;
      nodes.push_back(add(lerp(s.x0, s.x1, t), corrector_eval(result.student, s.x0, s.x1, t)));
    }
    GeodesicConfig gc;
    gc.step_size = 2e-3;
    gc.iterations = 3000;
    gc.projection = GeodesicConfig::Projection::rescaled;
    const auto oracle = optimize_path(make_linear_path(s.x0, s.x1, G), ambient, gc);
    const double student_action = action(DiscretePath{nodes}, ambient);
    const double oracle_action = action(oracle.path, ambient);
    CHECK(student_action <= oracle_action * 1.10);
    CHECK(student_action >= oracle_action * 0.90);
  }
}

TEST_CASE("boundary preservation: student interpolant hits the endpoints exactly") {
  const auto cd = bridge_density();
  CounterRng rng(5);
  auto ds = make_gmm_bridge_task(2, cd, rng);
  auto cfg = fast_config();
  cfg.epochs = 10;
  const auto result = distill_run(ds, cd, cfg, 3, {16, 16});
  for (const auto& s : ds.items) {
    const Vec at0 = add(lerp(s.x0, s.x1, 0.0), corrector_eval(result.student, s.x0, s.x1, 0.0));
    const Vec at1 = add(lerp(s.x0, s.x1, 1.0), corrector_eval(result.student, s.x0, s.x1, 1.0));
    CHECK(at0 == s.x0);
    CHECK(at1 == s.x1);
  }
}
