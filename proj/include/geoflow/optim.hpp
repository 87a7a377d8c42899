#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "geoflow/vec.hpp"

namespace geoflow {

/// Rescales g in place so its norm is at most max_norm. Returns the
/// pre-clip norm.
inline double clip_gradient(std::span<double> g, double max_norm) {
  double n = 0.0;
  for (double v : g) n += v * v;
  n = std::sqrt(n);
  if (n > max_norm && n > 0.0) {
    const double s = max_norm / n;
    for (auto& v : g) v *= s;
  }
  return n;
}

struct Sgd {
  double lr = 1e-3;
  void step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != grad.size()) throw std::invalid_argument("Sgd: size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
  }
};

/// Deterministic Adam with the standard constants.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != grad.size()) throw std::invalid_argument("Adam: size mismatch");
    if (m_.size() != params.size()) {
      m_.assign(params.size(), 0.0);
      v_.assign(params.size(), 0.0);
      t_ = 0;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1 * m_[i] + (1.0 - beta1) * grad[i];
      v_[i] = beta2 * v_[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps);
    }
  }

 private:
  std::vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace geoflow
