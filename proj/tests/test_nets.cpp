#include <catch2/catch_amalgamated.hpp>

#include "geoflow/nets.hpp"
#include "geoflow/rng.hpp"
#include "geoflow/tape.hpp"

using namespace geoflow;

TEST_CASE("boundary-zero invariant holds for arbitrary parameters") {
  CounterRng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    auto net = CorrectorNet::create(3, {8, 8}, rep % 2 ? Activation::tanh : Activation::silu,
                                    1000 + rep);
    for (auto& p : net.params) p = rng.normal() * 2.0;
    const Vec x0 = rng.normal_vec(3), x1 = rng.normal_vec(3);
    for (double t : {0.0, 1.0}) {
      const Vec out = corrector_eval(net, x0, x1, t);
      for (double v : out) CHECK(std::abs(v) < 1e-15);
    }
  }
}

TEST_CASE("fresh networks are the zero map (zero output layer)") {
  auto net = CorrectorNet::create(2, {32, 32}, Activation::silu, 7);
  const Vec out = corrector_eval(net, Vec{0.3, 0.4}, Vec{-0.8, 0.1}, 0.37);
  for (double v : out) CHECK(v == 0.0);
  const Vec d = corrector_time_derivative(net, Vec{0.3, 0.4}, Vec{-0.8, 0.1}, 0.37);
  for (double v : d) CHECK(v == 0.0);
}

TEST_CASE("time derivative matches finite differences on random nets") {
  CounterRng rng(5);
  double worst = 0.0;
  for (int rep = 0; rep < 60; ++rep) {
    auto net = CorrectorNet::create(2, {12, 12}, rep % 2 ? Activation::tanh : Activation::silu,
                                    rep);
    for (auto& p : net.params) p = rng.normal() * 0.8;
    const Vec x0 = rng.normal_vec(2), x1 = rng.normal_vec(2);
    const double t = rng.uniform(0.05, 0.95);
    const double h = 1e-4;
    const Vec d = corrector_time_derivative(net, x0, x1, t);
    const Vec fp = corrector_eval(net, x0, x1, t + h);
    const Vec fm = corrector_eval(net, x0, x1, t - h);
    Vec fd(2);
    for (int j = 0; j < 2; ++j) fd[j] = (fp[j] - fm[j]) / (2 * h);
    worst = std::max(worst, norm(sub(d, fd)) / std::max(norm(fd), 1e-9));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("time derivative at t=0 equals the raw network output") {
  // e'(0) = 1, so d/dt[e * raw] at 0 is raw(x0,x1,0).
  auto net = CorrectorNet::create(2, {10}, Activation::tanh, 3);
  CounterRng rng(8);
  for (auto& p : net.params) p = rng.normal();
  const Vec x0{0.2, -0.4}, x1{1.0, 0.3};
  Vec in = concat(x0, x1);
  in.push_back(0.0);
  const Vec raw = mlp_forward<double>(net.spec, net.params, in);
  const Vec d = corrector_time_derivative(net, x0, x1, 0.0);
  for (int j = 0; j < 2; ++j) CHECK(d[j] == Catch::Approx(raw[j]).margin(1e-13));
}

TEST_CASE("velocity net is deterministic given a seed") {
  auto a = VelocityNet::create(3, 2, {16, 16}, Activation::silu, 42);
  auto b = VelocityNet::create(3, 2, {16, 16}, Activation::silu, 42);
  CHECK(a.params == b.params);
  const Vec x{0.1, 0.2, -0.3}, c{1.0, 0.0};
  CHECK(velocity_eval(a, x, 0.4, c) == velocity_eval(b, x, 0.4, c));
}

TEST_CASE("affine velocity net reproduces a constant field") {
  // No hidden layers: output = W [x; t; c] + b. Set W = 0, b = b0.
  auto net = VelocityNet::create(2, 0, {}, Activation::silu, 0);
  REQUIRE(net.params.size() == 2 * 3 + 2);
  net.params[6] = 0.7;
  net.params[7] = -0.4;
  const Vec out = velocity_eval(net, Vec{5.0, -3.0}, 0.9, Vec{});
  CHECK(out[0] == 0.7);
  CHECK(out[1] == -0.4);
}

TEST_CASE("first-order parameter perturbation matches reverse-mode gradient") {
  auto net = VelocityNet::create(2, 1, {6}, Activation::tanh, 11);
  CounterRng rng(13);
  for (auto& p : net.params) p = rng.normal() * 0.5;
  const Vec x{0.4, -0.2}, c{0.8};
  Vec in = concat(x, Vec{0.3});
  const Vec full_in = concat(in, c);

  Tape tape;
  const auto pnode = tape.param(net.params);
  const auto out = mlp_forward_tape(tape, net.spec, pnode, tape.input(full_in));
  // Scalar probe: first output component.
  const auto probe = tape.dot(out, tape.input(Vec{1.0, 0.0}));
  tape.backward(probe);
  const Vec& g = tape.grad(pnode);

  const double eps = 1e-6;
  for (std::size_t i = 0; i < net.params.size(); i += 5) {
    auto perturbed = net;
    perturbed.params[i] += eps;
    const double delta = velocity_eval(perturbed, x, 0.3, c)[0] - velocity_eval(net, x, 0.3, c)[0];
    CHECK(delta == Catch::Approx(eps * g[i]).margin(1e-9));
  }
}

TEST_CASE("dimension mismatches are explicit errors") {
  auto net = CorrectorNet::create(2, {8}, Activation::silu, 1);
  CHECK_THROWS_AS(corrector_eval(net, Vec{1.0}, Vec{0.0, 0.0}, 0.4), std::invalid_argument);
  auto vnet = VelocityNet::create(2, 1, {8}, Activation::silu, 1);
  CHECK_THROWS_AS(velocity_eval(vnet, Vec{1.0, 2.0, 3.0}, 0.1, Vec{0.0}), std::invalid_argument);
  CHECK_THROWS_AS(velocity_eval(vnet, Vec{1.0, 2.0}, 0.1, Vec{}), std::invalid_argument);
}
