#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "geoflow/density.hpp"
#include "geoflow/nets.hpp"
#include "geoflow/tasks.hpp"
#include "geoflow/vec.hpp"

namespace geoflow {

/// Cumulative trapezoidal sums of <gamma-dot, grad log p(gamma)> along
/// a sampled path: log p(gamma(t_i)) - log p(gamma(0)) for the
/// conservative score field, path-independent for fixed endpoints.
/// First entry is zero.
inline std::vector<double> relative_log_prob(const std::vector<Vec>& points,
                                             const GaussianMixture& m) {
  const int n = static_cast<int>(points.size()) - 1;
  if (n < 2) throw std::invalid_argument("relative_log_prob: needs at least 3 points");
  std::vector<double> f(points.size());
  for (int i = 0; i <= n; ++i) {
    Vec vel(points[0].size());
    if (i == 0)
      vel = scale(sub(points[1], points[0]), static_cast<double>(n));
    else if (i == n)
      vel = scale(sub(points[static_cast<std::size_t>(n)], points[static_cast<std::size_t>(n) - 1]),
                  static_cast<double>(n));
    else
      vel = scale(sub(points[static_cast<std::size_t>(i) + 1], points[static_cast<std::size_t>(i) - 1]),
                  0.5 * n);
    f[static_cast<std::size_t>(i)] = dot(vel, score(m, points[static_cast<std::size_t>(i)]));
  }
  std::vector<double> out(points.size(), 0.0);
  for (int i = 1; i <= n; ++i)
    out[static_cast<std::size_t>(i)] =
        out[static_cast<std::size_t>(i) - 1] +
        0.5 * (f[static_cast<std::size_t>(i) - 1] + f[static_cast<std::size_t>(i)]) / n;
  return out;
}

struct ResidualCurve {
  std::vector<double> t;
  std::vector<double> mean_residual;
  int skipped = 0;  // degenerate-speed (pair, t) evaluations
};

/// Mean Euler-Lagrange residual of the student interpolant per
/// interior time, averaged over pairs. A zero corrector gives the
/// linear-interpolant curve.
inline ResidualCurve el_residual_curve(const CorrectorNet& student, const GaussianMixture& m,
                                       std::span<const PairedSample> pairs,
                                       std::span<const double> t_grid) {
  ResidualCurve curve;
  for (const double t : t_grid) {
    if (!(t > 0.0) || t >= 1.0)
      throw std::invalid_argument("el_residual_curve: t grid must be interior to (0,1)");
    double acc = 0.0;
    int used = 0;
    for (const auto& pair : pairs) {
      const Jet jet = interpolant_jet(student, pair.x0, pair.x1, t);
      const double speed2 = norm_sq(jet.d1);
      if (speed2 == 0.0) {
        ++curve.skipped;
        continue;
      }
      const Vec s = score(m, jet.value);
      const double proj = dot(jet.d1, s) / speed2;
      double r2 = 0.0;
      for (std::size_t j = 0; j < s.size(); ++j) {
        const double e = jet.d2[j] + speed2 * (s[j] - proj * jet.d1[j]);
        r2 += e * e;
      }
      acc += std::sqrt(r2);
      ++used;
    }
    curve.t.push_back(t);
    curve.mean_residual.push_back(used > 0 ? acc / used : 0.0);
  }
  return curve;
}

struct Smoothness {
  double ppl = 0.0;
  double turning = 0.0;  // mean angle between consecutive segments
};

/// Euclidean analog of perceptual path length: sum of squared step
/// lengths scaled by the segment count, plus the mean turning angle.
inline Smoothness path_smoothness(const std::vector<Vec>& points) {
  if (points.size() < 3) throw std::invalid_argument("path_smoothness: needs at least 3 points");
  Smoothness s;
  const int n = static_cast<int>(points.size()) - 1;
  for (int i = 0; i < n; ++i)
    s.ppl += norm_sq(sub(points[static_cast<std::size_t>(i) + 1], points[static_cast<std::size_t>(i)]));
  s.ppl *= n;
  int angles = 0;
  for (int i = 1; i < n; ++i) {
    const Vec a = sub(points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(i) - 1]);
    const Vec b = sub(points[static_cast<std::size_t>(i) + 1], points[static_cast<std::size_t>(i)]);
    const double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) continue;
    const double c = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
    s.turning += std::acos(c);
    ++angles;
  }
  if (angles > 0) s.turning /= angles;
  return s;
}

/// Energy distance 2 E||a-b|| - E||a-a'|| - E||b-b'|| with V-statistic
/// (all-pairs) expectations: nonnegative, zero iff the empirical
/// distributions coincide.
inline double energy_distance(std::span<const Vec> a, std::span<const Vec> b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("energy_distance: needs at least 2 samples per set");
  auto mean_cross = [](std::span<const Vec> u, std::span<const Vec> v) {
    double s = 0.0;
    for (const auto& x : u)
      for (const auto& y : v) s += distance(x, y);
    return s / (static_cast<double>(u.size()) * static_cast<double>(v.size()));
  };
  return 2.0 * mean_cross(a, b) - mean_cross(a, a) - mean_cross(b, b);
}

/// Root-mean-square endpoint error between prediction and truth sets.
inline double endpoint_rmse(std::span<const Vec> predicted, std::span<const Vec> truth) {
  if (predicted.size() != truth.size() || predicted.empty())
    throw std::invalid_argument("endpoint_rmse: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    check_same_dim(predicted[i], truth[i], "endpoint_rmse");
    acc += norm_sq(sub(predicted[i], truth[i]));
  }
  return std::sqrt(acc / static_cast<double>(predicted.size()));
}

}  // namespace geoflow
