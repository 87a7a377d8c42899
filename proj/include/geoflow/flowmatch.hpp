#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "geoflow/nets.hpp"
#include "geoflow/optim.hpp"
#include "geoflow/rng.hpp"
#include "geoflow/tape.hpp"
#include "geoflow/tasks.hpp"
#include "geoflow/vec.hpp"

namespace geoflow {

enum class Interpolant { linear, geodesic };
enum class TimeSampling { lognormal, uniform, grid };
enum class OdeMethod { euler, heun };

struct FmConfig {
  Interpolant interpolant = Interpolant::linear;
  double sigma_min = 0.01;
  double lr = 1e-3;
  int steps = 2000;
  int batch = 32;
  TimeSampling t_sampling = TimeSampling::lognormal;
  int t_grid_k = 10;  // for TimeSampling::grid
  double source_aug_strength = 0.0;
  std::vector<int> hidden = {128, 128};
  Activation activation = Activation::silu;
  double grad_clip = 10.0;

  void validate() const {
    if (sigma_min < 0.0) throw std::invalid_argument("FmConfig: sigma_min must be >= 0");
    if (steps < 1 || batch < 1) throw std::invalid_argument("FmConfig: steps/batch must be >= 1");
    if (t_grid_k < 1) throw std::invalid_argument("FmConfig: t_grid_k must be >= 1");
    if (source_aug_strength < 0.0 || source_aug_strength > 1.0)
      throw std::invalid_argument("FmConfig: source_aug_strength must be in [0,1]");
  }
};

/// x_t = (1-t) x0 + t x1 + sigma_min * eps, target velocity x1 - x0.
struct InterpolantSample {
  Vec x_t;
  Vec u_t;
};

inline InterpolantSample linear_interpolant(std::span<const double> x0,
                                            std::span<const double> x1, double t,
                                            double sigma_min, CounterRng& rng) {
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("linear_interpolant: t outside [0,1]");
  InterpolantSample s;
  s.x_t = lerp(x0, x1, t);
  if (sigma_min > 0.0)
    for (auto& v : s.x_t) v += sigma_min * rng.normal();
  s.u_t = sub(x1, x0);
  return s;
}

/// x_t = lerp + phi(x0,x1,t), target x1 - x0 + d/dt phi. Endpoints are
/// exact; no sigma_min noise in this mode.
inline InterpolantSample geodesic_interpolant(const CorrectorNet& student,
                                              std::span<const double> x0,
                                              std::span<const double> x1, double t) {
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("geodesic_interpolant: t outside [0,1]");
  const Jet jet = interpolant_jet(student, x0, x1, t);
  return InterpolantSample{jet.value, jet.d1};
}

/// Mean squared error between the velocity field and the targets.
struct CfmItem {
  Vec x_t;
  double t = 0.0;
  Vec c;
  Vec u_target;
};

inline double cfm_loss(const VelocityNet& v, std::span<const CfmItem> batch) {
  if (batch.empty()) throw std::invalid_argument("cfm_loss: empty batch");
  double acc = 0.0;
  for (const auto& item : batch) {
    const Vec out = velocity_eval(v, item.x_t, item.t, item.c);
    double s = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j) {
      const double d = out[j] - item.u_target[j];
      s += d * d;
    }
    acc += s;
  }
  return acc / static_cast<double>(batch.size());
}

/// Cosine-schedule source augmentation:
/// x0' = cos(s pi/2) x0 + sin(s pi/2) eps.
inline Vec source_augment(std::span<const double> x0, double strength, CounterRng& rng) {
  if (strength < 0.0 || strength > 1.0)
    throw std::invalid_argument("source_augment: strength must be in [0,1]");
  if (strength == 0.0) return Vec(x0.begin(), x0.end());
  const double c = std::cos(0.5 * std::numbers::pi * strength);
  const double s = std::sin(0.5 * std::numbers::pi * strength);
  Vec out(x0.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = c * x0[j] + s * rng.normal();
  return out;
}

namespace detail {

inline double sample_time(TimeSampling kind, int grid_k, CounterRng& rng) {
  switch (kind) {
    case TimeSampling::uniform: return rng.uniform01();
    case TimeSampling::lognormal: {
      // Logit-normal: standard normal squashed through the logistic.
      const double z = rng.normal();
      return 1.0 / (1.0 + std::exp(-z));
    }
    case TimeSampling::grid: {
      // Midpoints of the k inference intervals.
      const int i = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(grid_k));
      return (i + 0.5) / grid_k;
    }
  }
  return 0.5;
}

}  // namespace detail

struct FmResult {
  VelocityNet net;
  std::vector<double> loss_history;
};

/// Conditional flow matching on paired data. In geodesic mode the
/// student corrector supplies interpolants and targets and is never
/// mutated (two-phase contract).
inline FmResult train_fm(const Dataset& dataset, const CorrectorNet* student, const FmConfig& cfg,
                         std::uint64_t seed) {
  cfg.validate();
  if (dataset.items.empty()) throw std::invalid_argument("train_fm: empty dataset");
  if (cfg.interpolant == Interpolant::geodesic && student == nullptr)
    throw std::invalid_argument("train_fm: geodesic mode requires a student corrector");
  if (student != nullptr && student->dim() != dataset.dim)
    throw std::invalid_argument("train_fm: student dim does not match dataset");

  FmResult result{VelocityNet::create(dataset.dim, dataset.cond_dim, cfg.hidden, cfg.activation,
                                      seed),
                  {}};
  CounterRng rng(seed, 0xf10a);
  Adam opt;
  opt.lr = cfg.lr;
  result.loss_history.reserve(static_cast<std::size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    Tape tape;
    const auto params = tape.param(result.net.params);
    std::vector<Tape::NodeId> losses;
    losses.reserve(static_cast<std::size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& item =
          dataset.items[static_cast<std::size_t>(rng.next_u64() % dataset.items.size())];
      const double t = detail::sample_time(cfg.t_sampling, cfg.t_grid_k, rng);
      const Vec x0 = cfg.source_aug_strength > 0.0
                         ? source_augment(item.x0, cfg.source_aug_strength, rng)
                         : item.x0;
      InterpolantSample interp;
      if (cfg.interpolant == Interpolant::linear) {
        // sigma_min noise applies to interior samples only; endpoints
        // stay exact in both modes.
        const double sigma = (t > 0.0 && t < 1.0) ? cfg.sigma_min : 0.0;
        interp = linear_interpolant(x0, item.x1, t, sigma, rng);
      } else {
        if (student == nullptr) throw std::logic_error("train_fm: student is null");
        interp = geodesic_interpolant(*student, x0, item.x1, t);
      }
      Vec in = interp.x_t;
      in.push_back(t);
      in.insert(in.end(), item.c1.begin(), item.c1.end());
      const auto out = mlp_forward_tape(tape, result.net.spec, params, tape.input(in));
      const auto diff = tape.sub(out, tape.input(interp.u_t));
      losses.push_back(
          tape.scale(tape.dot(diff, diff), 1.0 / static_cast<double>(dataset.dim)));
    }
    const auto loss_node = tape_mean(tape, losses);
    result.loss_history.push_back(tape.scalar(loss_node));
    tape.backward(loss_node);
    Vec grad = tape.grad(params);
    clip_gradient(grad, cfg.grad_clip);
    opt.step(result.net.params, grad);
  }
  return result;
}

/// ODE sampling report; the trajectory records the initial state plus
/// one state per velocity evaluation, so its length is always nfe + 1
/// (Heun's predictor states are included).
struct SampleReport {
  std::vector<Vec> trajectory;
  int nfe = 0;
  Vec endpoint;
};

/// Integrates dx/dt = v(x,t,c) from the source datum at t=0 to t=1.
/// Heun spends two evaluations per step, so it takes nfe/2 steps.
inline SampleReport sample(const VelocityNet& v, std::span<const double> x0,
                           std::span<const double> c, int nfe, OdeMethod method) {
  if (nfe < 1) throw std::invalid_argument("sample: nfe must be >= 1");
  if (method == OdeMethod::heun && nfe % 2 != 0)
    throw std::invalid_argument("sample: Heun needs an even evaluation budget");
  SampleReport report;
  report.nfe = nfe;
  Vec x(x0.begin(), x0.end());
  report.trajectory.push_back(x);
  const int steps = method == OdeMethod::euler ? nfe : nfe / 2;
  const double h = 1.0 / steps;
  for (int s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) * h;
    const Vec k1 = velocity_eval(v, x, t, c);
    if (method == OdeMethod::euler) {
      axpy(h, k1, x);
    } else {
      Vec xp = x;
      axpy(h, k1, xp);
      report.trajectory.push_back(xp);
      const Vec k2 = velocity_eval(v, xp, t + h, c);
      for (std::size_t j = 0; j < x.size(); ++j) x[j] += 0.5 * h * (k1[j] + k2[j]);
    }
    if (!all_finite(x))
      throw std::runtime_error("sample: non-finite state at step " + std::to_string(s));
    report.trajectory.push_back(x);
  }
  report.endpoint = x;
  return report;
}

}  // namespace geoflow
