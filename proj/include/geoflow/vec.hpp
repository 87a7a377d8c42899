#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace geoflow {

/// Dense double vector used for states, latents and parameters.
using Vec = std::vector<double>;

inline void check_same_dim(std::span<const double> a, std::span<const double> b,
                           const char* where) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(where) + ": dimension mismatch (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  check_same_dim(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm_sq(std::span<const double> a) { return dot(a, a); }

inline double norm(std::span<const double> a) { return std::sqrt(norm_sq(a)); }

inline Vec add(std::span<const double> a, std::span<const double> b) {
  check_same_dim(a, b, "add");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

inline Vec sub(std::span<const double> a, std::span<const double> b) {
  check_same_dim(a, b, "sub");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

inline Vec scale(std::span<const double> a, double c) {
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = c * a[i];
  return r;
}

/// y += c * x
inline void axpy(double c, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

/// (1-t) a + t b
inline Vec lerp(std::span<const double> a, std::span<const double> b, double t) {
  check_same_dim(a, b, "lerp");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = (1.0 - t) * a[i] + t * b[i];
  return r;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  check_same_dim(a, b, "distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

inline Vec concat(std::span<const double> a, std::span<const double> b) {
  Vec r;
  r.reserve(a.size() + b.size());
  r.insert(r.end(), a.begin(), a.end());
  r.insert(r.end(), b.begin(), b.end());
  return r;
}

}  // namespace geoflow
