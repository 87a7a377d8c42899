#include <catch2/catch_amalgamated.hpp>

#include "geoflow/dual.hpp"
#include "geoflow/nets.hpp"
#include "geoflow/rng.hpp"

using namespace geoflow;

TEST_CASE("polynomial jet: f(t)=t^2 at t=3") {
  const auto jet = forward_dual(
      [](Dual2 t) { return std::vector<Dual2>{t * t}; }, 3.0);
  CHECK(jet.value[0] == 9.0);
  CHECK(jet.d1[0] == 6.0);
  CHECK(jet.d2[0] == 2.0);
}

TEST_CASE("linear interpolant jet is (lerp, x1-x0, 0)") {
  const Vec x0{1.0, -2.0}, x1{4.0, 0.5};
  for (double t : {0.0, 0.3, 1.0}) {
    const auto jet = forward_dual(
        [&](Dual2 td) {
          std::vector<Dual2> out;
          for (std::size_t j = 0; j < x0.size(); ++j)
            out.push_back(Dual2(x0[j]) + td * Dual2(x1[j] - x0[j]));
          return out;
        },
        t);
    for (std::size_t j = 0; j < x0.size(); ++j) {
      CHECK(jet.value[j] == Catch::Approx((1 - t) * x0[j] + t * x1[j]));
      CHECK(jet.d1[j] == Catch::Approx(x1[j] - x0[j]));
      CHECK(jet.d2[j] == 0.0);
    }
  }
}

TEST_CASE("second-order forward mode on sin") {
  for (double t : {-1.2, 0.0, 0.7, 2.9}) {
    const auto jet = forward_dual([](Dual2 td) { return std::vector<Dual2>{sin(td)}; }, t);
    CHECK(std::abs(jet.d1[0] - std::cos(t)) < 1e-12);
    CHECK(std::abs(jet.d2[0] + std::sin(t)) < 1e-12);
  }
}

TEST_CASE("product and quotient rules") {
  CounterRng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    const Dual2 f{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Dual2 g{rng.uniform(0.5, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Dual2 p = f * g;
    CHECK(p.d1 == Catch::Approx(f.d1 * g.v + f.v * g.d1).margin(1e-14));
    CHECK(p.d2 == Catch::Approx(f.d2 * g.v + 2 * f.d1 * g.d1 + f.v * g.d2).margin(1e-14));
    const Dual2 q = f / g;
    const Dual2 back = q * g;
    CHECK(back.v == Catch::Approx(f.v).margin(1e-12));
    CHECK(back.d1 == Catch::Approx(f.d1).margin(1e-12));
    CHECK(back.d2 == Catch::Approx(f.d2).margin(1e-12));
  }
}

TEST_CASE("constants carry zero derivatives through composite expressions") {
  const Dual2 c(3.5);
  const Dual2 r = exp(c) * tanh(c) + log(c);
  CHECK(r.d1 == 0.0);
  CHECK(r.d2 == 0.0);
}

TEST_CASE("network slice derivative matches central finite differences") {
  // A randomized corrector stands in for a trained one.
  auto net = CorrectorNet::create(2, {16, 16}, Activation::tanh, 42);
  CounterRng rng(11);
  for (auto& p : net.params) p = rng.normal() * 0.6;
  const Vec x0{0.4, -1.1}, x1{-0.3, 0.8};
  const double t = 0.37, h = 1e-4;
  const auto jet = interpolant_jet(net, x0, x1, t);
  const Vec plus = corrector_eval(net, x0, x1, t + h);
  const Vec minus = corrector_eval(net, x0, x1, t - h);
  for (int j = 0; j < 2; ++j) {
    const double fd = (plus[j] - minus[j]) / (2 * h) + (x1[j] - x0[j]);
    CHECK(std::abs(jet.d1[j] - fd) / std::abs(fd) < 1e-5);
  }
}

TEST_CASE("non-differentiable primitives raise domain errors") {
  CHECK_THROWS_AS(log(Dual2::variable(-1.0)), std::domain_error);
  CHECK_THROWS_AS(sqrt(Dual2::variable(-0.5)), std::domain_error);
  CHECK_THROWS_AS(sqrt(Dual2::variable(0.0)), std::domain_error);
  CHECK_THROWS_AS(Dual2::variable(1.0) / Dual2(0.0), std::domain_error);
}
