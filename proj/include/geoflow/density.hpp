#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "geoflow/vec.hpp"

namespace geoflow {

/// Gaussian mixture with diagonal covariances. Densities and scores
/// are exact; this is the analytic stand-in for a learned score model.
struct GaussianMixture {
  Vec weights;                 // simplex, length K
  std::vector<Vec> means;      // K vectors in R^d
  std::vector<Vec> vars;       // K diagonal covariance vectors, entries > 0

  int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }
  int components() const { return static_cast<int>(weights.size()); }

  void validate() const {
    if (weights.empty() || weights.size() != means.size() || weights.size() != vars.size())
      throw std::invalid_argument("GaussianMixture: inconsistent component counts");
    double sum = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw std::invalid_argument("GaussianMixture: negative weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw std::invalid_argument("GaussianMixture: weights sum to " + std::to_string(sum));
    const std::size_t d = means[0].size();
    for (std::size_t k = 0; k < means.size(); ++k) {
      if (means[k].size() != d || vars[k].size() != d)
        throw std::invalid_argument("GaussianMixture: component dim mismatch");
      for (double v : vars[k])
        if (v <= 0.0) throw std::invalid_argument("GaussianMixture: non-positive variance");
    }
  }
};

inline GaussianMixture standard_normal(int d) {
  return GaussianMixture{{1.0}, {Vec(d, 0.0)}, {Vec(d, 1.0)}};
}

namespace detail {

inline double component_log_density(const Vec& mean, const Vec& var,
                                    std::span<const double> x) {
  double q = 0.0;
  for (std::size_t j = 0; j < mean.size(); ++j) {
    const double dx = x[j] - mean[j];
    q += dx * dx / var[j] + std::log(2.0 * std::numbers::pi * var[j]);
  }
  return -0.5 * q;
}

}  // namespace detail

/// log p(x), log-sum-exp stabilized.
inline double log_density(const GaussianMixture& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.dim())
    throw std::invalid_argument("log_density: point has dim " + std::to_string(x.size()) +
                                ", expected " + std::to_string(m.dim()));
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> lk(m.weights.size());
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    lk[k] = m.weights[k] > 0.0
                ? std::log(m.weights[k]) + detail::component_log_density(m.means[k], m.vars[k], x)
                : -std::numeric_limits<double>::infinity();
    best = std::max(best, lk[k]);
  }
  double s = 0.0;
  for (double v : lk) s += std::exp(v - best);
  return best + std::log(s);
}

/// Exact score: responsibility-weighted component scores.
inline Vec score(const GaussianMixture& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.dim())
    throw std::invalid_argument("score: dimension mismatch");
  const double lp = log_density(m, x);
  Vec g(x.size(), 0.0);
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    if (m.weights[k] <= 0.0) continue;
    const double lr =
        std::log(m.weights[k]) + detail::component_log_density(m.means[k], m.vars[k], x) - lp;
    const double r = std::exp(lr);
    for (std::size_t j = 0; j < x.size(); ++j)
      g[j] += r * (m.means[k][j] - x[j]) / m.vars[k][j];
  }
  return g;
}

/// Exact law of sqrt(abar) X + sqrt(1-abar) eps: the variance-preserving
/// smoothing used as the analytic DDIM-F target space.
inline GaussianMixture smooth(const GaussianMixture& m, double abar) {
  if (!(abar > 0.0) || abar > 1.0)
    throw std::invalid_argument("smooth: abar must be in (0,1], got " + std::to_string(abar));
  GaussianMixture out = m;
  const double s = std::sqrt(abar);
  for (std::size_t k = 0; k < out.means.size(); ++k) {
    for (auto& mu : out.means[k]) mu *= s;
    for (auto& v : out.vars[k]) v = abar * v + (1.0 - abar);
  }
  return out;
}

/// Noise schedule alpha_bar(t) on t in [0,1]; alpha_bar(0)=1, monotone
/// non-increasing, strictly positive.
struct NoiseSchedule {
  enum class Kind { linear_vp, cosine };
  Kind kind = Kind::linear_vp;
  double beta_min = 0.1;
  double beta_max = 20.0;

  double alpha_bar(double t) const {
    switch (kind) {
      case Kind::linear_vp:
        return std::exp(-(beta_min * t + 0.5 * (beta_max - beta_min) * t * t));
      case Kind::cosine: {
        constexpr double s = 0.008;
        const double f = std::cos(0.5 * std::numbers::pi * (t + s) / (1.0 + s));
        const double f0 = std::cos(0.5 * std::numbers::pi * s / (1.0 + s));
        const double a = (f * f) / (f0 * f0);
        return std::clamp(a, 1e-9, 1.0);
      }
    }
    return 1.0;
  }

  /// beta(t) = -d/dt log alpha_bar(t).
  double beta(double t) const {
    switch (kind) {
      case Kind::linear_vp: return beta_min + (beta_max - beta_min) * t;
      case Kind::cosine: {
        constexpr double s = 0.008;
        const double u = 0.5 * std::numbers::pi * (t + s) / (1.0 + s);
        return std::numbers::pi * std::tan(u) / (1.0 + s);
      }
    }
    return 0.0;
  }

  /// Reporting quantity omega(tau) = -(1 - alpha_bar(tau))^{-1/2}.
  double omega(double tau) const {
    const double a = alpha_bar(tau);
    if (a >= 1.0) throw std::domain_error("omega: undefined at alpha_bar = 1");
    return -1.0 / std::sqrt(1.0 - a);
  }
};

/// Conditional + unconditional densities. Conditions are soft weights
/// over the labeled mixtures (a one-hot vector selects one label); the
/// unconditional branch is either the label-marginal mixture or a
/// uniform stub whose score is identically zero.
struct ConditionedDensity {
  std::vector<GaussianMixture> conditionals;   // one mixture per label
  Vec label_weights;                            // prior over labels
  std::optional<GaussianMixture> unconditional; // nullopt = uniform stub

  int dim() const { return conditionals.empty() ? 0 : conditionals[0].dim(); }
  int labels() const { return static_cast<int>(conditionals.size()); }

  /// Builds per-label conditionals plus the marginal unconditional from
  /// labeled components.
  static ConditionedDensity from_labeled(const std::vector<int>& labels,
                                         const GaussianMixture& components,
                                         bool uniform_unconditional = false) {
    components.validate();
    if (labels.size() != components.weights.size())
      throw std::invalid_argument("from_labeled: one label per component required");
    const int n_labels = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    if (n_labels < 1) throw std::invalid_argument("from_labeled: no labels");
    ConditionedDensity cd;
    cd.conditionals.resize(static_cast<std::size_t>(n_labels));
    cd.label_weights.assign(static_cast<std::size_t>(n_labels), 0.0);
    for (std::size_t k = 0; k < labels.size(); ++k) {
      const int l = labels[k];
      if (l < 0) throw std::invalid_argument("from_labeled: negative label");
      auto& mix = cd.conditionals[static_cast<std::size_t>(l)];
      mix.weights.push_back(components.weights[k]);
      mix.means.push_back(components.means[k]);
      mix.vars.push_back(components.vars[k]);
      cd.label_weights[static_cast<std::size_t>(l)] += components.weights[k];
    }
    for (std::size_t l = 0; l < cd.conditionals.size(); ++l) {
      auto& mix = cd.conditionals[l];
      if (mix.weights.empty())
        throw std::invalid_argument("from_labeled: label " + std::to_string(l) +
                                    " has no components");
      for (auto& w : mix.weights) w /= cd.label_weights[l];
      mix.validate();
    }
    if (!uniform_unconditional) cd.unconditional = components;
    return cd;
  }

  /// p(x|c) as a flattened mixture with label weights c (normalized).
  /// A single-label density is unconditional: any condition vector
  /// (e.g. a task's pose embedding) selects the sole label.
  GaussianMixture conditional_mixture(std::span<const double> c) const {
    if (labels() == 1) return conditionals[0];
    if (static_cast<int>(c.size()) != labels())
      throw std::invalid_argument("conditional_mixture: condition has " +
                                  std::to_string(c.size()) + " entries, expected " +
                                  std::to_string(labels()));
    double total = 0.0;
    for (double w : c) {
      if (w < 0.0) throw std::invalid_argument("conditional_mixture: negative condition weight");
      total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("conditional_mixture: zero condition weight");
    GaussianMixture out;
    for (std::size_t l = 0; l < conditionals.size(); ++l) {
      if (c[l] == 0.0) continue;
      const auto& mix = conditionals[l];
      for (std::size_t k = 0; k < mix.weights.size(); ++k) {
        out.weights.push_back(c[l] / total * mix.weights[k]);
        out.means.push_back(mix.means[k]);
        out.vars.push_back(mix.vars[k]);
      }
    }
    // Guard against rounding drift in the renormalized weights.
    double sum = 0.0;
    for (double w : out.weights) sum += w;
    for (auto& w : out.weights) w /= sum;
    return out;
  }
};

/// beta * (score of smoothed conditional - score of smoothed
/// unconditional); the classifier-free-guided score. beta = 0 gives the
/// zero vector, a uniform unconditional reduces it to the plain
/// conditional score.
inline Vec guided_score(const ConditionedDensity& cd, std::span<const double> x,
                        std::span<const double> c, double beta, double abar) {
  if (beta == 0.0) return Vec(x.size(), 0.0);
  Vec g = score(smooth(cd.conditional_mixture(c), abar), x);
  if (cd.unconditional) {
    const Vec gu = score(smooth(*cd.unconditional, abar), x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gu[i];
  }
  for (auto& v : g) v *= beta;
  return g;
}

/// beta * (log p_cond - log p_uncond) on the smoothed mixtures: the
/// potential whose gradient is guided_score. Used as the density value
/// in the teacher's functional derivative.
inline double log_guided_density(const ConditionedDensity& cd, std::span<const double> x,
                                 std::span<const double> c, double beta, double abar) {
  if (beta == 0.0) return 0.0;
  double lp = log_density(smooth(cd.conditional_mixture(c), abar), x);
  if (cd.unconditional) lp -= log_density(smooth(*cd.unconditional, abar), x);
  return beta * lp;
}

namespace detail {

/// Velocity of the VP probability-flow ODE at diffusion time t:
/// dx/dt = -1/2 beta(t) [x + score of the exact time-t marginal].
inline Vec pf_ode_velocity(const GaussianMixture& base, const NoiseSchedule& sched, double t,
                           std::span<const double> x) {
  const GaussianMixture mt = smooth(base, sched.alpha_bar(t));
  Vec v = score(mt, x);
  const double half_beta = 0.5 * sched.beta(t);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -half_beta * (x[i] + v[i]);
  return v;
}

inline Vec pf_ode_integrate(const GaussianMixture& base, const NoiseSchedule& sched,
                            std::span<const double> start, double t0, double t1, int steps) {
  if (steps < 1) throw std::invalid_argument("pf_ode: steps must be >= 1");
  Vec x(start.begin(), start.end());
  const double h = (t1 - t0) / steps;
  for (int s = 0; s < steps; ++s) {
    const double t = t0 + s * h;
    const Vec k1 = pf_ode_velocity(base, sched, t, x);
    Vec xp(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xp[i] = x[i] + h * k1[i];
    const Vec k2 = pf_ode_velocity(base, sched, t + h, xp);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += 0.5 * h * (k1[i] + k2[i]);
    if (!all_finite(x))
      throw std::runtime_error("pf_ode: non-finite state at step " + std::to_string(s));
  }
  return x;
}

}  // namespace detail

/// Deterministic map from data space to the tau-smoothed space: the
/// probability-flow analog of forward DDIM, integrated with Heun's
/// method at fixed step count.
inline Vec pf_ode_forward(const ConditionedDensity& cd, std::span<const double> x,
                          std::span<const double> c, double tau, int steps,
                          const NoiseSchedule& sched = {}) {
  if (!(tau > 0.0) || tau >= 1.0) throw std::invalid_argument("pf_ode_forward: tau not in (0,1)");
  return detail::pf_ode_integrate(cd.conditional_mixture(c), sched, x, 0.0, tau, steps);
}

/// Time-reversed integration of the same ODE, from tau back to 0.
inline Vec pf_ode_backward(const ConditionedDensity& cd, std::span<const double> z,
                           std::span<const double> c, double tau, int steps,
                           const NoiseSchedule& sched = {}) {
  if (!(tau > 0.0) || tau >= 1.0) throw std::invalid_argument("pf_ode_backward: tau not in (0,1)");
  return detail::pf_ode_integrate(cd.conditional_mixture(c), sched, z, tau, 0.0, steps);
}

}  // namespace geoflow
