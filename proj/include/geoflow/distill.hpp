#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "geoflow/density.hpp"
#include "geoflow/nets.hpp"
#include "geoflow/optim.hpp"
#include "geoflow/rng.hpp"
#include "geoflow/tape.hpp"
#include "geoflow/tasks.hpp"
#include "geoflow/vec.hpp"

namespace geoflow {

struct DistillConfig {
  double tau = 0.6;         // smoothing time of the forward map
  double beta = 1.0;        // guidance scale
  int t_grid_size = 8;      // interior time samples per pair
  double jitter = 1.0;      // stratified jitter amount in [0,1]
  double teacher_lr = 1e-6;
  double student_lr = 1e-3;
  int epochs = 100;
  int ode_steps = 30;
  double grad_clip = 10.0;
  enum class Phase { alternating, phased };
  Phase phase = Phase::alternating;
  NoiseSchedule schedule;

  void validate() const {
    if (!(tau > 0.0) || tau >= 1.0) throw std::invalid_argument("DistillConfig: tau not in (0,1)");
    if (t_grid_size < 1) throw std::invalid_argument("DistillConfig: t_grid_size must be >= 1");
    if (jitter < 0.0 || jitter > 1.0)
      throw std::invalid_argument("DistillConfig: jitter must be in [0,1]");
    if (epochs < 1) throw std::invalid_argument("DistillConfig: epochs must be >= 1");
    if (ode_steps < 1) throw std::invalid_argument("DistillConfig: ode_steps must be >= 1");
  }
};

/// Stratified interior time grid t_j = j/(n+1), each point jittered
/// uniformly within its stratum. All samples are strictly inside (0,1).
inline std::vector<double> time_sampler(int n, CounterRng& rng, double jitter = 1.0) {
  if (n < 1) throw std::invalid_argument("time_sampler: n must be >= 1");
  std::vector<double> ts(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j)
    ts[static_cast<std::size_t>(j - 1)] = (j + jitter * (rng.uniform01() - 0.5)) / (n + 1);
  return ts;
}

/// One training pair plus its forward-mapped endpoints
/// z_i = pf_ode_forward(x_i, c_i, tau).
struct DistillBatch {
  Vec x0, x1;
  Vec z0, z1;
  Vec c0, c1;
};

inline DistillBatch make_distill_batch(const PairedSample& s, const ConditionedDensity& cd,
                                       const DistillConfig& cfg) {
  DistillBatch b;
  b.x0 = s.x0;
  b.x1 = s.x1;
  b.c0 = s.c0;
  b.c1 = s.c1;
  b.z0 = pf_ode_forward(cd, s.x0, s.c0, cfg.tau, cfg.ode_steps, cfg.schedule);
  b.z1 = pf_ode_forward(cd, s.x1, s.c1, cfg.tau, cfg.ode_steps, cfg.schedule);
  return b;
}

/// Density-weighted length of the teacher interpolant in the smoothed
/// space, under the guided density exp(beta(log p_c - log p_u));
/// trapezoidal in t with exact forward-mode velocities.
inline double smoothed_action(const CorrectorNet& teacher, const DistillBatch& batch,
                              const ConditionedDensity& cd, const DistillConfig& cfg,
                              int quad_points = 33) {
  const double abar = cfg.schedule.alpha_bar(cfg.tau);
  double acc = 0.0;
  for (int i = 0; i <= quad_points; ++i) {
    const double t = static_cast<double>(i) / quad_points;
    const Jet jet = interpolant_jet(teacher, batch.z0, batch.z1, t);
    const Vec c_t = lerp(batch.c0, batch.c1, t);
    const double lp = log_guided_density(cd, jet.value, c_t, cfg.beta, abar);
    const double f = norm(jet.d1) * std::exp(-lp);
    acc += (i == 0 || i == quad_points) ? 0.5 * f : f;
  }
  return acc / quad_points;
}

struct TeacherReport {
  double loss = 0.0;
  double mean_g_norm = 0.0;
  double action_before = 0.0;
  double action_after = 0.0;
};

/// One stop-gradient variational step on the teacher: for each t,
/// z_t = lerp(z0,z1,t) + phi(z0,z1,t), g_t the functional-derivative
/// expression with the guided score, loss = mean <stop(g_t), z_t>.
inline TeacherReport teacher_step(CorrectorNet& teacher, const ConditionedDensity& cd,
                                  const DistillBatch& batch, const DistillConfig& cfg,
                                  const std::vector<double>& times) {
  if (times.empty()) throw std::invalid_argument("teacher_step: no time samples");
  const double abar = cfg.schedule.alpha_bar(cfg.tau);
  TeacherReport report;
  report.action_before = smoothed_action(teacher, batch, cd, cfg);

  Tape tape;
  const auto params = tape.param(teacher.params);
  Vec env_in = concat(batch.z0, batch.z1);
  env_in.push_back(0.0);
  std::vector<Tape::NodeId> losses;
  losses.reserve(times.size());
  for (const double t : times) {
    // gamma-dot and gamma-ddot of the interpolant, exact in t.
    const Jet jet = interpolant_jet(teacher, batch.z0, batch.z1, t);
    const Vec& z_t = jet.value;
    const double speed = norm(jet.d1);
    if (speed == 0.0)
      throw std::domain_error("teacher_step: vanishing interpolant speed at t = " +
                              std::to_string(t));
    const Vec c_t = lerp(batch.c0, batch.c1, t);
    const Vec s_t = guided_score(cd, z_t, c_t, cfg.beta, abar);
    const double log_p = log_guided_density(cd, z_t, c_t, cfg.beta, abar);
    if (!std::isfinite(log_p) || !all_finite(s_t))
      throw std::runtime_error("teacher_step: non-finite score at t = " + std::to_string(t));

    // Functional-derivative expression (full prefactor), score slot
    // filled by the guided score.
    const double proj = dot(jet.d1, s_t) / (speed * speed);
    const double pref = -1.0 / (std::exp(log_p) * speed);
    Vec g(z_t.size());
    for (std::size_t j = 0; j < g.size(); ++j)
      g[j] = pref * ((s_t[j] - proj * jet.d1[j]) + jet.d2[j] / (speed * speed));
    if (!all_finite(g))
      throw std::runtime_error("teacher_step: non-finite functional derivative at t = " +
                               std::to_string(t));
    report.mean_g_norm += norm(g) / static_cast<double>(times.size());

    // Tape side: z_t as a function of the teacher parameters.
    env_in.back() = t;
    const auto raw = mlp_forward_tape(tape, teacher.spec, params, tape.input(env_in));
    const auto corr = tape.scale(raw, t * (1.0 - t));
    const auto z_node = tape.add(tape.input(lerp(batch.z0, batch.z1, t)), corr);
    losses.push_back(tape.dot(tape.stop_grad(tape.input(g)), z_node));
  }
  const auto loss_node = tape_mean(tape, losses);
  report.loss = tape.scalar(loss_node);
  tape.backward(loss_node);
  Vec grad = tape.grad(params);
  clip_gradient(grad, cfg.grad_clip);
  for (std::size_t i = 0; i < teacher.params.size(); ++i)
    teacher.params[i] -= cfg.teacher_lr * grad[i];

  report.action_after = smoothed_action(teacher, batch, cd, cfg);
  return report;
}

struct StudentReport {
  double loss = 0.0;
};

/// One distillation step on the student: targets are the backward
/// probability-flow images of the (frozen) teacher's z_t.
inline StudentReport student_step(CorrectorNet& student, const CorrectorNet& teacher,
                                  const ConditionedDensity& cd, const DistillBatch& batch,
                                  const DistillConfig& cfg, const std::vector<double>& times) {
  if (times.empty()) throw std::invalid_argument("student_step: no time samples");
  Tape tape;
  const auto params = tape.param(student.params);
  Vec env_in = concat(batch.x0, batch.x1);
  env_in.push_back(0.0);
  std::vector<Tape::NodeId> losses;
  losses.reserve(times.size());
  for (const double t : times) {
    const Vec z_t = add(lerp(batch.z0, batch.z1, t), corrector_eval(teacher, batch.z0, batch.z1, t));
    const Vec c_t = lerp(batch.c0, batch.c1, t);
    Vec target;
    try {
      target = pf_ode_backward(cd, z_t, c_t, cfg.tau, cfg.ode_steps, cfg.schedule);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("student_step at t = " + std::to_string(t) + ": " + e.what());
    }
    env_in.back() = t;
    const auto raw = mlp_forward_tape(tape, student.spec, params, tape.input(env_in));
    const auto corr = tape.scale(raw, t * (1.0 - t));
    const auto x_node = tape.add(tape.input(lerp(batch.x0, batch.x1, t)), corr);
    const auto diff = tape.sub(x_node, tape.input(target));
    losses.push_back(tape.scale(tape.dot(diff, diff), 1.0 / static_cast<double>(target.size())));
  }
  const auto loss_node = tape_mean(tape, losses);
  StudentReport report;
  report.loss = tape.scalar(loss_node);
  tape.backward(loss_node);
  Vec grad = tape.grad(params);
  clip_gradient(grad, cfg.grad_clip);
  for (std::size_t i = 0; i < student.params.size(); ++i)
    student.params[i] -= cfg.student_lr * grad[i];
  return report;
}

struct DistillHistory {
  std::vector<double> teacher_loss;
  std::vector<double> student_loss;
  std::vector<double> action;    // mean smoothed-space action of the teacher
  std::vector<double> residual;  // mean ambient EL residual of the student
};

struct DistillResult {
  CorrectorNet teacher;
  CorrectorNet student;
  DistillHistory history;
};

/// Thrown by the divergence watchdog; carries the history so far.
struct distill_divergence_error : std::runtime_error {
  DistillHistory history;
  distill_divergence_error(const std::string& what, DistillHistory h)
      : std::runtime_error(what), history(std::move(h)) {}
};

namespace detail {

/// Mean EL-residual norm of the student interpolant against the
/// ambient marginal density, over an interior t grid.
inline double student_ambient_residual(const CorrectorNet& student, const GaussianMixture& ambient,
                                       const std::vector<DistillBatch>& batches, int grid = 9) {
  double acc = 0.0;
  int count = 0;
  for (const auto& b : batches) {
    for (int i = 1; i <= grid; ++i) {
      const double t = static_cast<double>(i) / (grid + 1);
      const Jet jet = interpolant_jet(student, b.x0, b.x1, t);
      const double speed2 = norm_sq(jet.d1);
      if (speed2 == 0.0) continue;
      const Vec s = score(ambient, jet.value);
      const double proj = dot(jet.d1, s) / speed2;
      double r2 = 0.0;
      for (std::size_t j = 0; j < s.size(); ++j) {
        const double e = jet.d2[j] + speed2 * (s[j] - proj * jet.d1[j]);
        r2 += e * e;
      }
      acc += std::sqrt(r2);
      ++count;
    }
  }
  return count > 0 ? acc / count : 0.0;
}

}  // namespace detail

/// Full teacher-student loop: per epoch, per pair, one teacher update
/// followed by one student update on the same time samples
/// (alternating mode), or all teacher epochs then all student epochs
/// (phased mode). Deterministic for a fixed seed.
inline DistillResult distill_run(const Dataset& pairs, const ConditionedDensity& cd,
                                 const DistillConfig& cfg, std::uint64_t seed,
                                 std::vector<int> hidden = {128, 128},
                                 Activation act = Activation::silu) {
  cfg.validate();
  if (pairs.items.empty()) throw std::invalid_argument("distill_run: empty dataset");
  const int d = pairs.dim;
  DistillResult result{CorrectorNet::create(d, hidden, act, seed),
                       CorrectorNet::create(d, hidden, act, seed + 1),
                       {}};
  CounterRng rng(seed, 0xd15711);

  std::vector<DistillBatch> batches;
  batches.reserve(pairs.items.size());
  for (const auto& s : pairs.items) batches.push_back(make_distill_batch(s, cd, cfg));

  const GaussianMixture ambient = cd.unconditional ? *cd.unconditional : [&] {
    Vec c(static_cast<std::size_t>(cd.labels()), 1.0);
    return cd.conditional_mixture(c);
  }();

  int rising = 0;
  double prev_action = std::numeric_limits<double>::infinity();
  const bool phased = cfg.phase == DistillConfig::Phase::phased;
  for (int pass = 0; pass < (phased ? 2 : 1); ++pass) {
    const bool teacher_pass = !phased || pass == 0;
    const bool student_pass = !phased || pass == 1;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      double teacher_loss = 0.0, student_loss = 0.0, action = 0.0;
      for (auto& batch : batches) {
        const auto times = time_sampler(cfg.t_grid_size, rng, cfg.jitter);
        if (teacher_pass) {
          const auto tr = teacher_step(result.teacher, cd, batch, cfg, times);
          teacher_loss += tr.loss;
          action += tr.action_after;
        } else {
          action += smoothed_action(result.teacher, batch, cd, cfg);
        }
        if (student_pass) {
          const auto sr = student_step(result.student, result.teacher, cd, batch, cfg, times);
          student_loss += sr.loss;
        }
      }
      const double n = static_cast<double>(batches.size());
      result.history.teacher_loss.push_back(teacher_loss / n);
      result.history.student_loss.push_back(student_loss / n);
      result.history.action.push_back(action / n);
      result.history.residual.push_back(
          detail::student_ambient_residual(result.student, ambient, batches));
      if (teacher_pass) {
        // Ten consecutive material increases abort the run.
        const double a = result.history.action.back();
        if (a > prev_action * (1.0 + 1e-6)) {
          if (++rising >= 10)
            throw distill_divergence_error(
                "distill_run: teacher action increased for 10 consecutive epochs at epoch " +
                    std::to_string(epoch),
                std::move(result.history));
        } else {
          rising = 0;
        }
        prev_action = a;
      }
    }
  }
  return result;
}

}  // namespace geoflow
