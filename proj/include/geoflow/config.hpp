#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoflow/density.hpp"
#include "geoflow/distill.hpp"
#include "geoflow/flowmatch.hpp"
#include "geoflow/path.hpp"
#include "geoflow/vec.hpp"

namespace geoflow {

/// Schema violations; the message carries the dotted field path.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace config {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::string& path,
                           const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.contains(key)) throw ConfigError(path + "." + key + ": unknown key");
}

inline const json& require(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) throw ConfigError(path + "." + key + ": missing required field");
  return j.at(key);
}

template <class T>
T get(const json& j, const std::string& path, const char* key) {
  try {
    return require(j, path, key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + "." + std::string(key) + ": " + e.what());
  }
}

template <class T>
T get_or(const json& j, const std::string& path, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + "." + std::string(key) + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct DensitySection {
  ConditionedDensity density;
  NoiseSchedule schedule;
};

inline NoiseSchedule parse_schedule(const json& j, const std::string& path) {
  reject_unknown(j, path, {"kind", "beta_min", "beta_max"});
  NoiseSchedule s;
  const auto kind = get_or<std::string>(j, path, "kind", "linear_vp");
  if (kind == "linear_vp")
    s.kind = NoiseSchedule::Kind::linear_vp;
  else if (kind == "cosine")
    s.kind = NoiseSchedule::Kind::cosine;
  else
    throw ConfigError(path + ".kind: expected linear_vp or cosine, got '" + kind + "'");
  s.beta_min = get_or<double>(j, path, "beta_min", 0.1);
  s.beta_max = get_or<double>(j, path, "beta_max", 20.0);
  return s;
}

inline DensitySection parse_density(const json& j, const std::string& path) {
  reject_unknown(j, path, {"components", "unconditional", "schedule"});
  const json& comps = require(j, path, "components");
  if (!comps.is_array() || comps.empty())
    throw ConfigError(path + ".components: expected a non-empty array");
  GaussianMixture mixture;
  std::vector<int> labels;
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const std::string cpath = path + ".components[" + std::to_string(k) + "]";
    reject_unknown(comps[k], cpath, {"weight", "mean", "cov_diag", "label"});
    mixture.weights.push_back(get<double>(comps[k], cpath, "weight"));
    mixture.means.push_back(get<Vec>(comps[k], cpath, "mean"));
    mixture.vars.push_back(get<Vec>(comps[k], cpath, "cov_diag"));
    labels.push_back(get_or<int>(comps[k], cpath, "label", 0));
  }
  try {
    mixture.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ".components: " + e.what());
  }
  const auto uncond = get_or<std::string>(j, path, "unconditional", "marginal");
  bool uniform = false;
  if (uncond == "uniform")
    uniform = true;
  else if (uncond != "marginal")
    throw ConfigError(path + ".unconditional: expected marginal or uniform, got '" + uncond + "'");
  DensitySection out{ConditionedDensity::from_labeled(labels, mixture, uniform), {}};
  if (j.contains("schedule")) out.schedule = parse_schedule(j.at("schedule"), path + ".schedule");
  return out;
}

// ---------------------------------------------------------------------------

struct TaskSection {
  enum class Kind { bridge, rotation, constant_offset };
  Kind kind = Kind::bridge;
  int n_pairs = 16;
  int holdout = 8;
  int dim = 2;
  double angle_min = 1.0;
  double angle_max = 2.6;
  Vec offset{0.7, -0.4};
};

inline TaskSection parse_task(const json& j, const std::string& path) {
  reject_unknown(j, path,
                 {"kind", "n_pairs", "holdout", "dim", "angle_min", "angle_max", "offset"});
  TaskSection t;
  const auto kind = get<std::string>(j, path, "kind");
  if (kind == "bridge")
    t.kind = TaskSection::Kind::bridge;
  else if (kind == "rotation")
    t.kind = TaskSection::Kind::rotation;
  else if (kind == "constant_offset")
    t.kind = TaskSection::Kind::constant_offset;
  else
    throw ConfigError(path + ".kind: expected bridge, rotation or constant_offset, got '" + kind +
                      "'");
  t.n_pairs = get_or<int>(j, path, "n_pairs", 16);
  t.holdout = get_or<int>(j, path, "holdout", 8);
  t.dim = get_or<int>(j, path, "dim", 2);
  t.angle_min = get_or<double>(j, path, "angle_min", 1.0);
  t.angle_max = get_or<double>(j, path, "angle_max", 2.6);
  t.offset = get_or<Vec>(j, path, "offset", Vec{0.7, -0.4});
  if (t.n_pairs < 1) throw ConfigError(path + ".n_pairs: must be >= 1");
  if (t.holdout < 0) throw ConfigError(path + ".holdout: must be >= 0");
  return t;
}

// ---------------------------------------------------------------------------

struct GeodesicSection {
  Vec x0, x1;
  int nodes = 64;
  GeodesicConfig solver;
  bool with_oracle = false;
  Vec oracle_lo, oracle_hi;
  int oracle_resolution = 256;
};

inline GeodesicSection parse_geodesic(const json& j, const std::string& path) {
  reject_unknown(j, path,
                 {"x0", "x1", "nodes", "step_size", "iterations", "resample_every", "projection",
                  "oracle"});
  GeodesicSection g;
  g.x0 = get<Vec>(j, path, "x0");
  g.x1 = get<Vec>(j, path, "x1");
  g.nodes = get_or<int>(j, path, "nodes", 64);
  g.solver.step_size = get_or<double>(j, path, "step_size", 1e-2);
  g.solver.iterations = get_or<int>(j, path, "iterations", 2000);
  g.solver.resample_every = get_or<int>(j, path, "resample_every", 10);
  const auto projection = get_or<std::string>(j, path, "projection", "full");
  if (projection == "full")
    g.solver.projection = GeodesicConfig::Projection::full_funcderiv;
  else if (projection == "rescaled")
    g.solver.projection = GeodesicConfig::Projection::rescaled;
  else
    throw ConfigError(path + ".projection: expected full or rescaled, got '" + projection + "'");
  if (j.contains("oracle")) {
    const std::string opath = path + ".oracle";
    const json& o = j.at("oracle");
    reject_unknown(o, opath, {"lo", "hi", "resolution"});
    g.with_oracle = true;
    g.oracle_lo = get<Vec>(o, opath, "lo");
    g.oracle_hi = get<Vec>(o, opath, "hi");
    g.oracle_resolution = get_or<int>(o, opath, "resolution", 256);
  }
  return g;
}

// ---------------------------------------------------------------------------

inline Activation parse_activation(const json& j, const std::string& path) {
  const auto name = get_or<std::string>(j, path, "activation", "silu");
  if (name == "silu") return Activation::silu;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError(path + ".activation: expected silu or tanh, got '" + name + "'");
}

struct DistillSection {
  DistillConfig cfg;
  std::vector<int> hidden{128, 128};
  Activation activation = Activation::silu;
};

inline DistillSection parse_distill(const json& j, const std::string& path) {
  reject_unknown(j, path,
                 {"tau", "beta", "t_grid", "jitter", "teacher_lr", "student_lr", "epochs",
                  "ode_steps", "phase", "hidden", "activation", "grad_clip"});
  DistillSection d;
  d.cfg.tau = get_or<double>(j, path, "tau", 0.6);
  d.cfg.beta = get_or<double>(j, path, "beta", 1.0);
  d.cfg.t_grid_size = get_or<int>(j, path, "t_grid", 8);
  d.cfg.jitter = get_or<double>(j, path, "jitter", 1.0);
  d.cfg.teacher_lr = get_or<double>(j, path, "teacher_lr", 1e-6);
  d.cfg.student_lr = get_or<double>(j, path, "student_lr", 1e-3);
  d.cfg.epochs = get_or<int>(j, path, "epochs", 100);
  d.cfg.ode_steps = get_or<int>(j, path, "ode_steps", 30);
  d.cfg.grad_clip = get_or<double>(j, path, "grad_clip", 10.0);
  const auto phase = get_or<std::string>(j, path, "phase", "alternating");
  if (phase == "alternating")
    d.cfg.phase = DistillConfig::Phase::alternating;
  else if (phase == "phased")
    d.cfg.phase = DistillConfig::Phase::phased;
  else
    throw ConfigError(path + ".phase: expected alternating or phased, got '" + phase + "'");
  d.hidden = get_or<std::vector<int>>(j, path, "hidden", {128, 128});
  d.activation = parse_activation(j, path);
  try {
    d.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return d;
}

// ---------------------------------------------------------------------------

struct FmSection {
  FmConfig cfg;
  std::optional<std::string> student_checkpoint;
};

inline FmSection parse_fm(const json& j, const std::string& path) {
  reject_unknown(j, path,
                 {"interpolant", "sigma_min", "lr", "steps", "batch", "t_sampling", "t_grid_k",
                  "source_aug_strength", "hidden", "activation", "student_checkpoint",
                  "grad_clip"});
  FmSection f;
  const auto interpolant = get_or<std::string>(j, path, "interpolant", "linear");
  if (interpolant == "linear")
    f.cfg.interpolant = Interpolant::linear;
  else if (interpolant == "geodesic")
    f.cfg.interpolant = Interpolant::geodesic;
  else
    throw ConfigError(path + ".interpolant: expected linear or geodesic, got '" + interpolant +
                      "'");
  f.cfg.sigma_min = get_or<double>(j, path, "sigma_min", 0.01);
  f.cfg.lr = get_or<double>(j, path, "lr", 1e-3);
  f.cfg.steps = get_or<int>(j, path, "steps", 2000);
  f.cfg.batch = get_or<int>(j, path, "batch", 32);
  const auto sampling = get_or<std::string>(j, path, "t_sampling", "lognormal");
  if (sampling == "lognormal")
    f.cfg.t_sampling = TimeSampling::lognormal;
  else if (sampling == "uniform")
    f.cfg.t_sampling = TimeSampling::uniform;
  else if (sampling == "grid")
    f.cfg.t_sampling = TimeSampling::grid;
  else
    throw ConfigError(path + ".t_sampling: expected lognormal, uniform or grid, got '" + sampling +
                      "'");
  f.cfg.t_grid_k = get_or<int>(j, path, "t_grid_k", 10);
  f.cfg.source_aug_strength = get_or<double>(j, path, "source_aug_strength", 0.0);
  f.cfg.hidden = get_or<std::vector<int>>(j, path, "hidden", {128, 128});
  f.cfg.activation = parse_activation(j, path);
  f.cfg.grad_clip = get_or<double>(j, path, "grad_clip", 10.0);
  if (j.contains("student_checkpoint"))
    f.student_checkpoint = get<std::string>(j, path, "student_checkpoint");
  try {
    f.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return f;
}

// ---------------------------------------------------------------------------

struct SampleSection {
  std::optional<std::string> checkpoint;
  int nfe = 100;
  OdeMethod method = OdeMethod::euler;
  int count = 16;
};

inline SampleSection parse_sample(const json& j, const std::string& path) {
  reject_unknown(j, path, {"checkpoint", "nfe", "method", "count"});
  SampleSection s;
  if (j.contains("checkpoint")) s.checkpoint = get<std::string>(j, path, "checkpoint");
  s.nfe = get_or<int>(j, path, "nfe", 100);
  s.count = get_or<int>(j, path, "count", 16);
  const auto method = get_or<std::string>(j, path, "method", "euler");
  if (method == "euler")
    s.method = OdeMethod::euler;
  else if (method == "heun")
    s.method = OdeMethod::heun;
  else
    throw ConfigError(path + ".method: expected euler or heun, got '" + method + "'");
  if (s.nfe < 1) throw ConfigError(path + ".nfe: must be >= 1");
  return s;
}

// ---------------------------------------------------------------------------

struct EvalSection {
  std::optional<std::string> student_checkpoint;
  std::optional<std::string> velocity_checkpoint;
  int n_pairs = 32;
  int t_points = 11;
  int nfe = 100;
  OdeMethod method = OdeMethod::euler;
};

inline EvalSection parse_eval(const json& j, const std::string& path) {
  reject_unknown(j, path,
                 {"student_checkpoint", "velocity_checkpoint", "n_pairs", "t_points", "nfe",
                  "method"});
  EvalSection e;
  if (j.contains("student_checkpoint"))
    e.student_checkpoint = get<std::string>(j, path, "student_checkpoint");
  if (j.contains("velocity_checkpoint"))
    e.velocity_checkpoint = get<std::string>(j, path, "velocity_checkpoint");
  e.n_pairs = get_or<int>(j, path, "n_pairs", 32);
  e.t_points = get_or<int>(j, path, "t_points", 11);
  e.nfe = get_or<int>(j, path, "nfe", 100);
  const auto method = get_or<std::string>(j, path, "method", "euler");
  if (method == "euler")
    e.method = OdeMethod::euler;
  else if (method == "heun")
    e.method = OdeMethod::heun;
  else
    throw ConfigError(path + ".method: expected euler or heun, got '" + method + "'");
  if (e.t_points < 3) throw ConfigError(path + ".t_points: must be >= 3");
  return e;
}

// ---------------------------------------------------------------------------

struct Experiment {
  std::string name = "run";
  std::uint64_t seed = 0;
  std::optional<DensitySection> density;
  std::optional<TaskSection> task;
  std::optional<GeodesicSection> geodesic;
  std::optional<DistillSection> distill;
  std::optional<FmSection> fm;
  std::optional<SampleSection> sample;
  std::optional<EvalSection> eval;
  std::string raw;  // canonical config bytes, hashed into the manifest
};

inline Experiment parse_experiment(const json& j) {
  reject_unknown(j, "config",
                 {"name", "seed", "density", "task", "geodesic", "distill", "fm", "sample",
                  "eval"});
  Experiment e;
  e.name = get_or<std::string>(j, "config", "name", "run");
  e.seed = get_or<std::uint64_t>(j, "config", "seed", 0);
  if (j.contains("density")) e.density = parse_density(j.at("density"), "density");
  if (j.contains("task")) e.task = parse_task(j.at("task"), "task");
  if (j.contains("geodesic")) e.geodesic = parse_geodesic(j.at("geodesic"), "geodesic");
  if (j.contains("distill")) e.distill = parse_distill(j.at("distill"), "distill");
  if (j.contains("fm")) e.fm = parse_fm(j.at("fm"), "fm");
  if (j.contains("sample")) e.sample = parse_sample(j.at("sample"), "sample");
  if (j.contains("eval")) e.eval = parse_eval(j.at("eval"), "eval");
  e.raw = j.dump();
  return e;
}

inline Experiment load_experiment(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& err) {
    throw ConfigError("config: parse error in " + path + ": " + err.what());
  }
  return parse_experiment(j);
}

}  // namespace config
}  // namespace geoflow
