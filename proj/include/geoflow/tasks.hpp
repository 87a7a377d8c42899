#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "geoflow/container.hpp"
#include "geoflow/density.hpp"
#include "geoflow/rng.hpp"
#include "geoflow/vec.hpp"

namespace geoflow {

/// One paired-view training item: source/target latents, per-view
/// conditions and the pose parameters that generated them.
struct PairedSample {
  Vec x0, x1;
  Vec c0, c1;
  Vec meta;
};

struct Dataset {
  std::vector<PairedSample> items;
  int dim = 0;
  int cond_dim = 0;
  int meta_dim = 0;
};

// ---------------------------------------------------------------------------
// Plucker rays

/// (o x d_hat, d_hat); invariant to sliding the origin along the ray.
inline Vec plucker_embed(std::span<const double> o, std::span<const double> d) {
  if (o.size() != 3 || d.size() != 3) throw std::invalid_argument("plucker_embed: 3D only");
  const double n = norm(d);
  if (n == 0.0) throw std::invalid_argument("plucker_embed: zero direction");
  const Vec dh{d[0] / n, d[1] / n, d[2] / n};
  return Vec{o[1] * dh[2] - o[2] * dh[1], o[2] * dh[0] - o[0] * dh[2],
             o[0] * dh[1] - o[1] * dh[0], dh[0], dh[1], dh[2]};
}

/// Camera pose with origin, row-major rotation and pinhole intrinsics.
struct CameraPose {
  Vec origin{0.0, 0.0, 0.0};
  std::array<double, 9> rot{1, 0, 0, 0, 1, 0, 0, 0, 1};
  double focal = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  void validate() const {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double d = 0.0;
        for (int k = 0; k < 3; ++k) d += rot[3 * k + i] * rot[3 * k + j];
        if (std::abs(d - (i == j ? 1.0 : 0.0)) > 1e-10)
          throw std::invalid_argument("CameraPose: rotation not orthonormal");
      }
    const double det = rot[0] * (rot[4] * rot[8] - rot[5] * rot[7]) -
                       rot[1] * (rot[3] * rot[8] - rot[5] * rot[6]) +
                       rot[2] * (rot[3] * rot[7] - rot[4] * rot[6]);
    if (std::abs(det - 1.0) > 1e-10)
      throw std::invalid_argument("CameraPose: rotation must have det +1");
  }

  Vec rotate(std::span<const double> v) const {
    return Vec{rot[0] * v[0] + rot[1] * v[1] + rot[2] * v[2],
               rot[3] * v[0] + rot[4] * v[1] + rot[5] * v[2],
               rot[6] * v[0] + rot[7] * v[1] + rot[8] * v[2]};
  }

  static CameraPose rotation_z(double angle) {
    CameraPose p;
    const double c = std::cos(angle), s = std::sin(angle);
    p.rot = {c, -s, 0, s, c, 0, 0, 0, 1};
    return p;
  }
};

/// Per-pixel Plucker embeddings for a camera expressed relative to the
/// source frame (the source camera is the canonical reference). Rays
/// pass through pixel centers; row-major over (row, col).
inline std::vector<Vec> ray_grid(const CameraPose& pose, int width, int height) {
  pose.validate();
  if (width < 1 || height < 1) throw std::invalid_argument("ray_grid: empty grid");
  if (pose.focal == 0.0) throw std::invalid_argument("ray_grid: zero focal length");
  std::vector<Vec> rays;
  rays.reserve(static_cast<std::size_t>(width) * height);
  for (int row = 0; row < height; ++row)
    for (int col = 0; col < width; ++col) {
      const double u = (col + 0.5 - 0.5 * width) - pose.cx;
      const double v = (row + 0.5 - 0.5 * height) - pose.cy;
      const Vec dir_cam{u / pose.focal, v / pose.focal, 1.0};
      rays.push_back(plucker_embed(pose.origin, pose.rotate(dir_cam)));
    }
  return rays;
}

// ---------------------------------------------------------------------------
// Rotation task

/// Elementwise monotone warp making the view transport nonlinear.
inline double view_warp(double u) { return u + 0.6 * std::tanh(u); }

inline double view_warp_inverse(double y) {
  // Newton iteration; the warp derivative is in [1, 1.6].
  double u = y;
  for (int it = 0; it < 60; ++it) {
    const double t = std::tanh(u);
    const double f = u + 0.6 * t - y;
    if (std::abs(f) < 1e-14) break;
    u -= f / (1.0 + 0.6 * (1.0 - t * t));
  }
  return u;
}

/// Rotates consecutive coordinate pairs by the angle.
inline Vec block_rotate(std::span<const double> z, double angle) {
  Vec out(z.begin(), z.end());
  const double c = std::cos(angle), s = std::sin(angle);
  for (std::size_t j = 0; j + 1 < out.size(); j += 2) {
    const double a = out[j], b = out[j + 1];
    out[j] = c * a - s * b;
    out[j + 1] = s * a + c * b;
  }
  return out;
}

/// The fixed view map: block-rotate the latent, then warp elementwise.
inline Vec render_view(std::span<const double> z, double angle) {
  Vec x = block_rotate(z, angle);
  for (auto& v : x) v = view_warp(v);
  return x;
}

/// Exact inverse of render_view, used as the transport oracle.
inline Vec unrender_view(std::span<const double> x, double angle) {
  Vec z(x.begin(), x.end());
  for (auto& v : z) v = view_warp_inverse(v);
  return block_rotate(z, -angle);
}

/// Ground-truth transport between views: x1 = warp(R(dtheta) warp^-1(x0)).
inline Vec view_transport(std::span<const double> x0, double dtheta) {
  return render_view(unrender_view(x0, 0.0), dtheta);
}

/// Base latent distribution for the rotation task: a ring-ish offset
/// Gaussian so views sweep a circle in each rotated block.
inline GaussianMixture rotation_base_mixture(int d) {
  Vec mean(d, 0.0);
  for (std::size_t j = 0; j + 1 < mean.size(); j += 2) mean[j] = 1.3;
  if (d % 2) mean.back() = 0.5;
  return GaussianMixture{{1.0}, {mean}, {Vec(d, 0.08)}};
}

/// Analytic density model of the view manifold: warped images of the
/// base mode at a grid of angles. This is the distillation prior for
/// the rotation task, playing the role the pretrained score plays at
/// full scale.
inline ConditionedDensity rotation_task_density(int d, int n_modes = 16) {
  const auto base = rotation_base_mixture(d);
  GaussianMixture m;
  std::vector<int> labels;
  for (int k = 0; k < n_modes; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / n_modes;
    m.weights.push_back(1.0 / n_modes);
    m.means.push_back(render_view(base.means[0], angle));
    m.vars.push_back(Vec(static_cast<std::size_t>(d), 0.10));
    labels.push_back(0);
  }
  m.validate();
  return ConditionedDensity::from_labeled(labels, m, /*uniform_unconditional=*/true);
}

/// Paired views of shared latents under random poses; condition is
/// (cos dtheta, sin dtheta). The transport x0 -> x1 is deterministic
/// given dtheta and bijective.
inline Dataset make_rotation_task(int n_pairs, int d, double angle_min, double angle_max,
                                  CounterRng& rng) {
  if (d < 2) throw std::invalid_argument("make_rotation_task: d must be >= 2");
  if (n_pairs < 1) throw std::invalid_argument("make_rotation_task: empty dataset");
  const auto base = rotation_base_mixture(d);
  Dataset ds;
  ds.dim = d;
  ds.cond_dim = 2;
  ds.meta_dim = 2;
  ds.items.reserve(static_cast<std::size_t>(n_pairs));
  for (int i = 0; i < n_pairs; ++i) {
    Vec z = base.means[0];
    for (int j = 0; j < d; ++j) z[j] += std::sqrt(base.vars[0][j]) * rng.normal();
    const double theta0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double dtheta = rng.uniform(angle_min, angle_max);
    PairedSample s;
    s.x0 = render_view(z, theta0);
    s.x1 = render_view(z, theta0 + dtheta);
    s.c0 = {1.0, 0.0};  // relative angle of the source to itself
    s.c1 = {std::cos(dtheta), std::sin(dtheta)};
    s.meta = {theta0, dtheta};
    ds.items.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Bridge task

/// Pairs across two labeled modes with a shared latent seed: x0 and x1
/// use the same standard-normal draw through their own component's
/// moments, so the coupling is deterministic per seed and the
/// marginals match the mode laws.
inline Dataset make_gmm_bridge_task(int n_pairs, const ConditionedDensity& cd, CounterRng& rng) {
  if (cd.labels() < 2)
    throw std::invalid_argument("make_gmm_bridge_task: needs at least 2 labeled modes");
  if (n_pairs < 1) throw std::invalid_argument("make_gmm_bridge_task: empty dataset");
  const GaussianMixture& a = cd.conditionals[0];
  const GaussianMixture& b = cd.conditionals[1];
  const int d = cd.dim();
  Dataset ds;
  ds.dim = d;
  ds.cond_dim = cd.labels();
  ds.meta_dim = 2;
  for (int i = 0; i < n_pairs; ++i) {
    // Component choice by weight, shared across the pair.
    const double u = rng.uniform01();
    std::size_t ka = 0;
    double acc = 0.0;
    for (; ka + 1 < a.weights.size(); ++ka) {
      acc += a.weights[ka];
      if (u < acc) break;
    }
    const std::size_t kb = ka % b.weights.size();
    PairedSample s;
    s.x0.resize(d);
    s.x1.resize(d);
    for (int j = 0; j < d; ++j) {
      const double eps = rng.normal();
      s.x0[j] = a.means[ka][j] + std::sqrt(a.vars[ka][j]) * eps;
      s.x1[j] = b.means[kb][j] + std::sqrt(b.vars[kb][j]) * eps;
    }
    s.c0.assign(static_cast<std::size_t>(cd.labels()), 0.0);
    s.c1.assign(static_cast<std::size_t>(cd.labels()), 0.0);
    s.c0[0] = 1.0;
    s.c1[1] = 1.0;
    s.meta = {static_cast<double>(ka), static_cast<double>(kb)};
    ds.items.push_back(std::move(s));
  }
  return ds;
}

/// Constant-offset sanity task: x1 = x0 + b for a fixed offset.
inline Dataset make_constant_offset_task(int n_pairs, const Vec& offset, CounterRng& rng) {
  Dataset ds;
  ds.dim = static_cast<int>(offset.size());
  ds.cond_dim = 0;
  ds.meta_dim = 0;
  for (int i = 0; i < n_pairs; ++i) {
    PairedSample s;
    s.x0 = rng.normal_vec(offset.size());
    s.x1 = add(s.x0, offset);
    ds.items.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr std::uint32_t kPairedPayloadKind = 1;

inline void write_dataset(const std::string& path, const Dataset& ds) {
  const std::size_t row = 2 * static_cast<std::size_t>(ds.dim) + 2 * ds.cond_dim + ds.meta_dim;
  Vec payload;
  payload.reserve(ds.items.size() * row);
  for (const auto& s : ds.items) {
    payload.insert(payload.end(), s.x0.begin(), s.x0.end());
    payload.insert(payload.end(), s.x1.begin(), s.x1.end());
    payload.insert(payload.end(), s.c0.begin(), s.c0.end());
    payload.insert(payload.end(), s.c1.begin(), s.c1.end());
    payload.insert(payload.end(), s.meta.begin(), s.meta.end());
  }
  ContainerHeader header;
  header.kind = kPairedPayloadKind;
  header.count = ds.items.size();
  header.dim = row;
  header.aux0 = static_cast<std::uint32_t>(ds.dim);
  header.aux1 = static_cast<std::uint32_t>(ds.cond_dim);
  header.aux2 = static_cast<std::uint32_t>(ds.meta_dim);
  write_container(path, header, payload);
}

/// Plain-text form for inspection: one row per pair with x0/x1/c0/c1/meta
/// columns at full precision.
inline void write_dataset_csv(const std::string& path, const Dataset& ds) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_dataset_csv: cannot open " + path);
  auto cols = [&](const char* prefix, int n) {
    for (int j = 0; j < n; ++j) f << ',' << prefix << j;
  };
  f << "pair";
  cols("x0_", ds.dim);
  cols("x1_", ds.dim);
  cols("c0_", ds.cond_dim);
  cols("c1_", ds.cond_dim);
  cols("meta_", ds.meta_dim);
  f << '\n';
  char buf[40];
  auto emit = [&](std::span<const double> v) {
    for (double x : v) {
      std::snprintf(buf, sizeof(buf), "%.17g", x);
      f << ',' << buf;
    }
  };
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    f << i;
    emit(ds.items[i].x0);
    emit(ds.items[i].x1);
    emit(ds.items[i].c0);
    emit(ds.items[i].c1);
    emit(ds.items[i].meta);
    f << '\n';
  }
}

inline Dataset read_dataset(const std::string& path) {
  const auto data = read_container(path);
  if (data.header.kind != kPairedPayloadKind)
    throw std::runtime_error("read_dataset: container is not a paired dataset");
  Dataset ds;
  ds.dim = static_cast<int>(data.header.aux0);
  ds.cond_dim = static_cast<int>(data.header.aux1);
  ds.meta_dim = static_cast<int>(data.header.aux2);
  const std::size_t row = 2 * static_cast<std::size_t>(ds.dim) + 2 * ds.cond_dim + ds.meta_dim;
  if (row != data.header.dim || data.payload.size() != data.header.count * row)
    throw std::runtime_error("read_dataset: inconsistent layout in " + path);
  const double* p = data.payload.data();
  for (std::uint64_t i = 0; i < data.header.count; ++i) {
    PairedSample s;
    s.x0.assign(p, p + ds.dim);
    p += ds.dim;
    s.x1.assign(p, p + ds.dim);
    p += ds.dim;
    s.c0.assign(p, p + ds.cond_dim);
    p += ds.cond_dim;
    s.c1.assign(p, p + ds.cond_dim);
    p += ds.cond_dim;
    s.meta.assign(p, p + ds.meta_dim);
    p += ds.meta_dim;
    ds.items.push_back(std::move(s));
  }
  return ds;
}

}  // namespace geoflow
