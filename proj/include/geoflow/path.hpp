#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "geoflow/density.hpp"
#include "geoflow/vec.hpp"

namespace geoflow {

/// Discretized curve on [0,1]: N+1 nodes at uniform t_i = i/N with
/// pinned endpoints. The node-based object the variational solver
/// descends on.
struct DiscretePath {
  std::vector<Vec> nodes;

  int segments() const { return static_cast<int>(nodes.size()) - 1; }
  int dim() const { return nodes.empty() ? 0 : static_cast<int>(nodes[0].size()); }

  void validate() const {
    if (segments() < 4) throw std::invalid_argument("DiscretePath: needs N >= 4 segments");
    for (const auto& n : nodes) {
      if (static_cast<int>(n.size()) != dim())
        throw std::invalid_argument("DiscretePath: node dim mismatch");
      if (!all_finite(n)) throw std::invalid_argument("DiscretePath: non-finite node");
    }
  }
};

inline DiscretePath make_linear_path(std::span<const double> x0, std::span<const double> x1,
                                     int segments) {
  check_same_dim(x0, x1, "make_linear_path");
  DiscretePath p;
  p.nodes.reserve(static_cast<std::size_t>(segments) + 1);
  for (int i = 0; i <= segments; ++i)
    p.nodes.push_back(lerp(x0, x1, static_cast<double>(i) / segments));
  return p;
}

struct PathDerivatives {
  std::vector<Vec> vel;
  std::vector<Vec> acc;
};

/// Central differences at interior nodes, one-sided second-order
/// stencils at the endpoints. Exact on quadratics.
inline PathDerivatives path_derivatives(const DiscretePath& p) {
  p.validate();
  const int n = p.segments();
  const double N = static_cast<double>(n);
  const int d = p.dim();
  PathDerivatives out;
  out.vel.assign(p.nodes.size(), Vec(d, 0.0));
  out.acc.assign(p.nodes.size(), Vec(d, 0.0));
  const auto& x = p.nodes;
  for (int i = 1; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      out.vel[i][j] = (x[i + 1][j] - x[i - 1][j]) * N / 2.0;
      out.acc[i][j] = (x[i + 1][j] - 2.0 * x[i][j] + x[i - 1][j]) * N * N;
    }
  for (int j = 0; j < d; ++j) {
    out.vel[0][j] = (-3.0 * x[0][j] + 4.0 * x[1][j] - x[2][j]) * N / 2.0;
    out.vel[n][j] = (3.0 * x[n][j] - 4.0 * x[n - 1][j] + x[n - 2][j]) * N / 2.0;
    out.acc[0][j] = (2.0 * x[0][j] - 5.0 * x[1][j] + 4.0 * x[2][j] - x[3][j]) * N * N;
    out.acc[n][j] = (2.0 * x[n][j] - 5.0 * x[n - 1][j] + 4.0 * x[n - 2][j] - x[n - 3][j]) * N * N;
  }
  return out;
}

/// Density-weighted length: trapezoidal quadrature of ||dgamma/dt|| / p
/// over the node grid.
inline double action(const DiscretePath& p, const GaussianMixture& m) {
  const auto deriv = path_derivatives(p);
  const int n = p.segments();
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double f = norm(deriv.vel[i]) / std::exp(log_density(m, p.nodes[i]));
    s += (i == 0 || i == n) ? 0.5 * f : f;
  }
  return s / n;
}

/// delta S / delta gamma at each interior node,
///   -1/(p ||v||) [ (I - vhat vhat^T) grad log p + a / ||v||^2 ],
/// for constant-speed parameterizations; endpoints are zero.
inline std::vector<Vec> functional_derivative(const DiscretePath& p, const GaussianMixture& m) {
  const auto deriv = path_derivatives(p);
  const int n = p.segments();
  const int d = p.dim();
  std::vector<Vec> g(p.nodes.size(), Vec(d, 0.0));
  for (int i = 1; i < n; ++i) {
    const Vec& v = deriv.vel[i];
    const double speed = norm(v);
    if (speed == 0.0)
      throw std::domain_error("functional_derivative: vanishing speed at node " +
                              std::to_string(i));
    const Vec s = score(m, p.nodes[i]);
    const double proj = dot(v, s) / (speed * speed);
    const double pref = -1.0 / (std::exp(log_density(m, p.nodes[i])) * speed);
    for (int j = 0; j < d; ++j)
      g[i][j] = pref * ((s[j] - proj * v[j]) + deriv.acc[i][j] / (speed * speed));
  }
  return g;
}

/// Norm of the Euler-Lagrange defect per node,
///   || a + ||v||^2 (I - vhat vhat^T) grad log p ||,
/// zero exactly on geodesics; endpoints reported as zero.
inline std::vector<double> el_residual(const DiscretePath& p, const GaussianMixture& m) {
  const auto deriv = path_derivatives(p);
  const int n = p.segments();
  const int d = p.dim();
  std::vector<double> r(p.nodes.size(), 0.0);
  for (int i = 1; i < n; ++i) {
    const Vec& v = deriv.vel[i];
    const double speed2 = norm_sq(v);
    if (speed2 == 0.0)
      throw std::domain_error("el_residual: vanishing speed at node " + std::to_string(i));
    const Vec s = score(m, p.nodes[i]);
    const double proj = dot(v, s) / speed2;
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
      const double e = deriv.acc[i][j] + speed2 * (s[j] - proj * v[j]);
      acc += e * e;
    }
    r[i] = std::sqrt(acc);
  }
  return r;
}

/// Places `count`+1 nodes at uniform cumulative arc positions along a
/// polyline. Returns the input endpoints unchanged.
inline std::vector<Vec> resample_polyline(const std::vector<Vec>& nodes, int count) {
  const int n = static_cast<int>(nodes.size()) - 1;
  std::vector<double> cum(nodes.size(), 0.0);
  for (int i = 1; i <= n; ++i) cum[i] = cum[i - 1] + distance(nodes[i], nodes[i - 1]);
  const double total = cum[static_cast<std::size_t>(n)];
  std::vector<Vec> out(static_cast<std::size_t>(count) + 1);
  out.front() = nodes.front();
  out.back() = nodes.back();
  if (total == 0.0) {
    for (int i = 1; i < count; ++i) out[static_cast<std::size_t>(i)] = nodes.front();
    return out;
  }
  int seg = 0;
  for (int i = 1; i < count; ++i) {
    const double target = total * i / count;
    while (seg < n - 1 && cum[seg + 1] < target) ++seg;
    const double seg_len = cum[seg + 1] - cum[seg];
    const double u = seg_len > 0.0 ? (target - cum[seg]) / seg_len : 0.0;
    out[static_cast<std::size_t>(i)] = lerp(nodes[seg], nodes[seg + 1], u);
  }
  return out;
}

/// One-pass redistribution of the nodes to uniform cumulative arc
/// length measured along the source polyline. Endpoints stay fixed; a
/// zero-length path is returned unchanged.
inline DiscretePath resample_constant_speed(const DiscretePath& p) {
  p.validate();
  return DiscretePath{resample_polyline(p.nodes, p.segments())};
}

struct GeodesicConfig {
  double step_size = 1e-2;
  int iterations = 2000;
  int resample_every = 10;
  enum class Projection { full_funcderiv, rescaled };
  Projection projection = Projection::full_funcderiv;

  void validate() const {
    if (!(step_size > 0.0)) throw std::invalid_argument("GeodesicConfig: step_size must be > 0");
    if (resample_every < 1)
      throw std::invalid_argument("GeodesicConfig: resample_every must be >= 1");
    if (iterations < 0) throw std::invalid_argument("GeodesicConfig: iterations must be >= 0");
  }
};

/// Thrown when descent loses monotonicity for 10 consecutive
/// iterations or the path goes non-finite; carries the action history
/// recorded up to the failure.
struct divergence_error : std::runtime_error {
  std::vector<double> history;
  divergence_error(const std::string& what, std::vector<double> h)
      : std::runtime_error(what), history(std::move(h)) {}
};

struct OptimizeResult {
  DiscretePath path;
  std::vector<double> action_history;
};

/// Direct gradient descent on the node positions with periodic
/// constant-speed reparameterization. Endpoints are never touched.
inline OptimizeResult optimize_path(const DiscretePath& initial, const GaussianMixture& m,
                                    const GeodesicConfig& cfg) {
  cfg.validate();
  initial.validate();
  const int n = initial.segments();
  DiscretePath p = initial;
  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(cfg.iterations) + 1);
  if (distance(p.nodes.front(), p.nodes.back()) == 0.0) {
    history.push_back(action(p, m));
    return {std::move(p), std::move(history)};
  }
  double prev = action(p, m);
  history.push_back(prev);
  int rising = 0;
  for (int it = 1; it <= cfg.iterations; ++it) {
    const auto g = functional_derivative(p, m);
    if (cfg.projection == GeodesicConfig::Projection::full_funcderiv) {
      for (int i = 1; i < n; ++i) axpy(-cfg.step_size, g[i], p.nodes[i]);
    } else {
      // Rescaled direction: drop the positive 1/(p||v||) prefactor,
      // keep the sign of the descent direction.
      const auto deriv = path_derivatives(p);
      for (int i = 1; i < n; ++i) {
        const double pref = std::exp(log_density(m, p.nodes[i])) * norm(deriv.vel[i]);
        axpy(-cfg.step_size * pref, g[i], p.nodes[i]);
      }
    }
    for (int i = 1; i < n; ++i)
      if (!all_finite(p.nodes[i]))
        throw divergence_error("optimize_path: non-finite node at iteration " + std::to_string(it),
                               history);
    if (it % cfg.resample_every == 0) p = resample_constant_speed(p);
    const double a = action(p, m);
    history.push_back(a);
    // Ten consecutive material increases abort the run.
    if (a > prev * (1.0 + 1e-9)) {
      if (++rising >= 10)
        throw divergence_error(
            "optimize_path: action increased for 10 consecutive iterations at iteration " +
                std::to_string(it),
            history);
    } else {
      rising = 0;
    }
    prev = a;
  }
  return {std::move(p), std::move(history)};
}

}  // namespace geoflow
