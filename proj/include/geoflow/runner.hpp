#pragma once

#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include <json.hpp>

#include "geoflow/checkpoint.hpp"
#include "geoflow/config.hpp"
#include "geoflow/crc32.hpp"
#include "geoflow/csv.hpp"
#include "geoflow/distill.hpp"
#include "geoflow/flowmatch.hpp"
#include "geoflow/grid_oracle.hpp"
#include "geoflow/metrics.hpp"
#include "geoflow/path.hpp"
#include "geoflow/tasks.hpp"

namespace geoflow::runner {

constexpr const char* kArtifactVersion = "0.1.0";

struct RunContext {
  config::Experiment experiment;
  std::filesystem::path out;
};

inline std::filesystem::path csv_dir(const RunContext& ctx) { return ctx.out / "csv"; }
inline std::filesystem::path ckpt_dir(const RunContext& ctx) { return ctx.out / "checkpoints"; }

inline void write_manifest(const RunContext& ctx, const std::string& command) {
  std::filesystem::create_directories(ctx.out);
  nlohmann::json manifest = {
      {"name", ctx.experiment.name},
      {"command", command},
      {"seed", ctx.experiment.seed},
      {"config_crc32",
       crc32({reinterpret_cast<const std::uint8_t*>(ctx.experiment.raw.data()),
              ctx.experiment.raw.size()})},
      {"versions",
       {{"artifact", kArtifactVersion},
        {"container", ContainerHeader::kVersion},
        {"checkpoint", checkpoint::kVersion}}},
  };
  std::ofstream f(ctx.out / "manifest.json");
  if (!f) throw std::runtime_error("runner: cannot write manifest under " + ctx.out.string());
  f << manifest.dump(2) << '\n';
}

inline void prepare_dirs(const RunContext& ctx, const std::string& command) {
  write_manifest(ctx, command);
  std::filesystem::create_directories(csv_dir(ctx));
  std::filesystem::create_directories(ckpt_dir(ctx));
}

namespace detail {

inline void write_path_csv(const std::filesystem::path& file, const std::vector<Vec>& nodes) {
  std::vector<std::string> header{"t"};
  for (std::size_t j = 0; j < nodes.front().size(); ++j) header.push_back("x" + std::to_string(j));
  csv::Writer w(file.string(), header);
  const double n = static_cast<double>(nodes.size()) - 1.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    Vec row{static_cast<double>(i) / n};
    row.insert(row.end(), nodes[i].begin(), nodes[i].end());
    w.row(row);
  }
}

inline const config::DensitySection& need_density(const config::Experiment& e,
                                                  const char* command) {
  if (!e.density)
    throw ConfigError(std::string("config: '") + command + "' requires a density section");
  return *e.density;
}

inline const config::TaskSection& need_task(const config::Experiment& e, const char* command) {
  if (!e.task) throw ConfigError(std::string("config: '") + command + "' requires a task section");
  return *e.task;
}

/// Distillation density for a task: the configured zoo, or the warped
/// ring prior for the rotation task when no density is given.
inline config::DensitySection task_density(const config::Experiment& e, const char* command) {
  if (e.density) return *e.density;
  if (e.task && e.task->kind == config::TaskSection::Kind::rotation)
    return {rotation_task_density(e.task->dim), NoiseSchedule{}};
  throw ConfigError(std::string("config: '") + command + "' requires a density section");
}

inline Dataset build_dataset(const config::TaskSection& task,
                             const config::DensitySection* density, std::uint64_t seed,
                             std::uint64_t stream, int n_pairs) {
  CounterRng rng(seed, stream);
  switch (task.kind) {
    case config::TaskSection::Kind::bridge: {
      if (!density) throw ConfigError("config: bridge task requires a density section");
      return make_gmm_bridge_task(n_pairs, density->density, rng);
    }
    case config::TaskSection::Kind::rotation:
      return make_rotation_task(n_pairs, task.dim, task.angle_min, task.angle_max, rng);
    case config::TaskSection::Kind::constant_offset:
      return make_constant_offset_task(n_pairs, task.offset, rng);
  }
  throw ConfigError("config: unknown task kind");
}

constexpr std::uint64_t kTrainStream = 0x7261;
constexpr std::uint64_t kHoldoutStream = 0x686f;

}  // namespace detail

// ---------------------------------------------------------------------------

/// Direct node-based geodesic solve plus the grid-oracle comparison.
inline void cmd_geodesic(const RunContext& ctx) {
  const auto& e = ctx.experiment;
  const auto& density = detail::need_density(e, "geodesic");
  if (!e.geodesic) throw ConfigError("config: 'geodesic' requires a geodesic section");
  const auto& g = *e.geodesic;
  prepare_dirs(ctx, "geodesic");

  const GaussianMixture ambient = density.density.unconditional
                                      ? *density.density.unconditional
                                      : density.density.conditional_mixture(Vec(
                                            static_cast<std::size_t>(density.density.labels()),
                                            1.0));
  const DiscretePath initial = make_linear_path(g.x0, g.x1, g.nodes);
  const auto result = optimize_path(initial, ambient, g.solver);

  detail::write_path_csv(csv_dir(ctx) / "path_initial.csv", initial.nodes);
  detail::write_path_csv(csv_dir(ctx) / "path_optimized.csv", result.path.nodes);
  {
    csv::Writer w((csv_dir(ctx) / "action_history.csv").string(), {"iteration", "action"});
    for (std::size_t i = 0; i < result.action_history.size(); ++i)
      w.row({static_cast<double>(i), result.action_history[i]});
  }

  const double linear_action = action(initial, ambient);
  const double optimized_action = action(result.path, ambient);
  double oracle_action = std::numeric_limits<double>::quiet_NaN();
  if (g.with_oracle) {
    const auto oracle =
        grid_geodesic_oracle(ambient, g.x0, g.x1, g.oracle_lo, g.oracle_hi, g.oracle_resolution);
    oracle_action = oracle.action;
    detail::write_path_csv(csv_dir(ctx) / "path_oracle.csv", oracle.path);
  }
  csv::Writer w((csv_dir(ctx) / "actions.csv").string(),
                {"linear_action", "optimized_action", "oracle_action"});
  w.row({linear_action, optimized_action, oracle_action});
}

// ---------------------------------------------------------------------------

/// Teacher-student distillation on the configured paired task.
inline void cmd_distill(const RunContext& ctx) {
  const auto& e = ctx.experiment;
  const auto density = detail::task_density(e, "distill");
  const auto& task = detail::need_task(e, "distill");
  if (!e.distill) throw ConfigError("config: 'distill' requires a distill section");
  prepare_dirs(ctx, "distill");

  const Dataset train =
      detail::build_dataset(task, &density, e.seed, detail::kTrainStream, task.n_pairs);
  write_dataset((ctx.out / "train.gfdc").string(), train);

  auto cfg = e.distill->cfg;
  cfg.schedule = density.schedule;
  const auto result =
      distill_run(train, density.density, cfg, e.seed, e.distill->hidden, e.distill->activation);

  save_checkpoint(result.teacher, (ckpt_dir(ctx) / "teacher.gfnc").string());
  save_checkpoint(result.student, (ckpt_dir(ctx) / "student.gfnc").string());
  csv::Writer w((csv_dir(ctx) / "distill_history.csv").string(),
                {"epoch", "teacher_loss", "student_loss", "action", "residual"});
  for (std::size_t i = 0; i < result.history.teacher_loss.size(); ++i)
    w.row({static_cast<double>(i), result.history.teacher_loss[i], result.history.student_loss[i],
           result.history.action[i], result.history.residual[i]});
}

// ---------------------------------------------------------------------------

/// Conditional flow matching in linear or geodesic mode. The geodesic
/// student defaults to this run's distill output, so the two commands
/// compose on one config without edits.
inline void cmd_train_fm(const RunContext& ctx) {
  const auto& e = ctx.experiment;
  const auto& task = detail::need_task(e, "train-fm");
  if (!e.fm) throw ConfigError("config: 'train-fm' requires an fm section");
  prepare_dirs(ctx, "train-fm");

  const config::DensitySection* density = e.density ? &*e.density : nullptr;
  if (!density && task.kind == config::TaskSection::Kind::bridge)
    throw ConfigError("config: bridge task requires a density section");
  const Dataset train =
      detail::build_dataset(task, density, e.seed, detail::kTrainStream, task.n_pairs);
  write_dataset((ctx.out / "train.gfdc").string(), train);

  CorrectorNet student;
  const CorrectorNet* student_ptr = nullptr;
  if (e.fm->cfg.interpolant == Interpolant::geodesic) {
    const std::string path = e.fm->student_checkpoint
                                 ? *e.fm->student_checkpoint
                                 : (ckpt_dir(ctx) / "student.gfnc").string();
    student = load_corrector(path);
    student_ptr = &student;
  }
  const auto result = train_fm(train, student_ptr, e.fm->cfg, e.seed);

  save_checkpoint(result.net, (ckpt_dir(ctx) / "velocity.gfnc").string());
  csv::Writer w((csv_dir(ctx) / "fm_loss.csv").string(), {"step", "loss"});
  for (std::size_t i = 0; i < result.loss_history.size(); ++i)
    w.row({static_cast<double>(i), result.loss_history[i]});
}

// ---------------------------------------------------------------------------

/// Transports held-out sources through a trained velocity field and
/// records the trajectories.
inline void cmd_sample(const RunContext& ctx) {
  const auto& e = ctx.experiment;
  const auto& task = detail::need_task(e, "sample");
  if (!e.sample) throw ConfigError("config: 'sample' requires a sample section");
  prepare_dirs(ctx, "sample");

  const config::DensitySection* density = e.density ? &*e.density : nullptr;
  const Dataset held =
      detail::build_dataset(task, density, e.seed, detail::kHoldoutStream,
                            std::max(task.holdout, e.sample->count));
  const std::string ckpt = e.sample->checkpoint ? *e.sample->checkpoint
                                                : (ckpt_dir(ctx) / "velocity.gfnc").string();
  const VelocityNet net = load_velocity(ckpt);

  std::vector<std::string> header{"sample", "step", "t"};
  for (int j = 0; j < net.state_dim; ++j) header.push_back("x" + std::to_string(j));
  csv::Writer traj((csv_dir(ctx) / "trajectories.csv").string(), header);
  std::vector<std::string> eheader{"sample"};
  for (int j = 0; j < net.state_dim; ++j) eheader.push_back("x" + std::to_string(j));
  for (int j = 0; j < net.state_dim; ++j) eheader.push_back("target" + std::to_string(j));
  csv::Writer endp((csv_dir(ctx) / "endpoints.csv").string(), eheader);

  for (int i = 0; i < e.sample->count; ++i) {
    const auto& item = held.items[static_cast<std::size_t>(i)];
    const auto report = sample(net, item.x0, item.c1, e.sample->nfe, e.sample->method);
    for (std::size_t s = 0; s < report.trajectory.size(); ++s) {
      Vec row{static_cast<double>(i), static_cast<double>(s),
              static_cast<double>(s) / (static_cast<double>(report.trajectory.size()) - 1.0)};
      row.insert(row.end(), report.trajectory[s].begin(), report.trajectory[s].end());
      traj.row(row);
    }
    Vec row{static_cast<double>(i)};
    row.insert(row.end(), report.endpoint.begin(), report.endpoint.end());
    row.insert(row.end(), item.x1.begin(), item.x1.end());
    endp.row(row);
  }
}

// ---------------------------------------------------------------------------

/// Metrics suite over a run directory: residual curves, relative
/// log-probability, smoothness and endpoint statistics.
inline void cmd_eval(const RunContext& ctx) {
  const auto& e = ctx.experiment;
  const auto& task = detail::need_task(e, "eval");
  if (!e.eval) throw ConfigError("config: 'eval' requires an eval section");
  const auto density = detail::task_density(e, "eval");
  prepare_dirs(ctx, "eval");

  const GaussianMixture ambient =
      density.density.unconditional
          ? *density.density.unconditional
          : density.density.conditional_mixture(
                Vec(static_cast<std::size_t>(density.density.labels()), 1.0));
  const Dataset held =
      detail::build_dataset(task, &density, e.seed, detail::kHoldoutStream,
                            std::max(task.holdout, e.eval->n_pairs));

  nlohmann::json summary;
  summary["pairs"] = held.items.size();

  // Interior t grid with the configured number of points.
  Vec t_grid;
  for (int i = 1; i <= e.eval->t_points; ++i)
    t_grid.push_back(static_cast<double>(i) / (e.eval->t_points + 1));

  const CorrectorNet zero = CorrectorNet::create(held.dim, {8}, Activation::silu, 0);
  const auto linear_curve = el_residual_curve(zero, ambient, held.items, t_grid);
  {
    csv::Writer w((csv_dir(ctx) / "el_residual_curve.csv").string(),
                  {"t", "linear_residual", "student_residual"});
    std::vector<double> student_curve(t_grid.size(),
                                      std::numeric_limits<double>::quiet_NaN());
    if (e.eval->student_checkpoint) {
      const CorrectorNet student = load_corrector(*e.eval->student_checkpoint);
      const auto curve = el_residual_curve(student, ambient, held.items, t_grid);
      student_curve = curve.mean_residual;
      double lin_mean = 0.0, stu_mean = 0.0;
      for (std::size_t i = 0; i < t_grid.size(); ++i) {
        lin_mean += linear_curve.mean_residual[i] / t_grid.size();
        stu_mean += curve.mean_residual[i] / t_grid.size();
      }
      summary["mean_linear_residual"] = lin_mean;
      summary["mean_student_residual"] = stu_mean;
      summary["residual_ratio"] = stu_mean / lin_mean;
    }
    for (std::size_t i = 0; i < t_grid.size(); ++i)
      w.row({t_grid[i], linear_curve.mean_residual[i], student_curve[i]});
  }

  // Relative log-probability along the linear and (optionally) student
  // interpolants of the first held-out pair.
  {
    const auto& pair = held.items.front();
    const int n = 512;
    std::vector<Vec> line;
    for (int i = 0; i <= n; ++i)
      line.push_back(lerp(pair.x0, pair.x1, static_cast<double>(i) / n));
    const auto curve = relative_log_prob(line, ambient);
    csv::Writer w((csv_dir(ctx) / "relative_log_prob.csv").string(), {"t", "rel_log_prob"});
    for (int i = 0; i <= n; ++i)
      w.row({static_cast<double>(i) / n, curve[static_cast<std::size_t>(i)]});
    summary["rel_log_prob_endpoint"] = curve.back();
  }

  // Velocity-field transport quality and smoothness.
  if (e.eval->velocity_checkpoint) {
    const VelocityNet net = load_velocity(*e.eval->velocity_checkpoint);
    std::vector<Vec> predicted, truth;
    csv::Writer w((csv_dir(ctx) / "path_smoothness.csv").string(),
                  {"sample", "ppl", "turning"});
    double mean_ppl = 0.0, mean_turning = 0.0;
    for (std::size_t i = 0; i < held.items.size(); ++i) {
      const auto& item = held.items[i];
      const auto report = sample(net, item.x0, item.c1, e.eval->nfe, e.eval->method);
      predicted.push_back(report.endpoint);
      truth.push_back(item.x1);
      // Frame the trajectory at the configured number of points.
      std::vector<Vec> frames;
      const std::size_t last = report.trajectory.size() - 1;
      for (int k = 0; k < e.eval->t_points; ++k)
        frames.push_back(
            report.trajectory[last * static_cast<std::size_t>(k) / (e.eval->t_points - 1)]);
      const auto smooth = path_smoothness(frames);
      w.row({static_cast<double>(i), smooth.ppl, smooth.turning});
      mean_ppl += smooth.ppl / static_cast<double>(held.items.size());
      mean_turning += smooth.turning / static_cast<double>(held.items.size());
    }
    summary["endpoint_rmse"] = endpoint_rmse(predicted, truth);
    summary["energy_distance"] = energy_distance(predicted, truth);
    summary["mean_ppl"] = mean_ppl;
    summary["mean_turning"] = mean_turning;
  }

  std::ofstream f(ctx.out / "summary.json");
  f << summary.dump(2) << '\n';
}

}  // namespace geoflow::runner
