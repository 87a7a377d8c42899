#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "geoflow/vec.hpp"

namespace geoflow {

/// Second-order dual number: carries a value together with the first
/// and second derivative with respect to one scalar parameter.
/// Arithmetic follows the truncated Taylor (jet) rules, e.g.
/// (f*g).d1 = f.d1*g.v + f.v*g.d1 and
/// (f*g).d2 = f.d2*g.v + 2*f.d1*g.d1 + f.v*g.d2.
struct Dual2 {
  double v = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;

  constexpr Dual2() = default;
  constexpr Dual2(double value) : v(value) {}
  constexpr Dual2(double value, double first, double second) : v(value), d1(first), d2(second) {}

  /// The differentiation variable itself: t with dt/dt = 1.
  static constexpr Dual2 variable(double t) { return Dual2(t, 1.0, 0.0); }

  Dual2 operator-() const { return {-v, -d1, -d2}; }

  Dual2& operator+=(const Dual2& o) {
    v += o.v;
    d1 += o.d1;
    d2 += o.d2;
    return *this;
  }
  Dual2& operator-=(const Dual2& o) {
    v -= o.v;
    d1 -= o.d1;
    d2 -= o.d2;
    return *this;
  }
  Dual2& operator*=(const Dual2& o) {
    d2 = d2 * o.v + 2.0 * d1 * o.d1 + v * o.d2;
    d1 = d1 * o.v + v * o.d1;
    v *= o.v;
    return *this;
  }
  Dual2& operator/=(const Dual2& o) {
    if (o.v == 0.0) throw std::domain_error("dual divide: zero denominator");
    const double q = v / o.v;
    const double q1 = (d1 - q * o.d1) / o.v;
    const double q2 = (d2 - 2.0 * q1 * o.d1 - q * o.d2) / o.v;
    v = q;
    d1 = q1;
    d2 = q2;
    return *this;
  }
};

inline Dual2 operator+(Dual2 a, const Dual2& b) { return a += b; }
inline Dual2 operator-(Dual2 a, const Dual2& b) { return a -= b; }
inline Dual2 operator*(Dual2 a, const Dual2& b) { return a *= b; }
inline Dual2 operator/(Dual2 a, const Dual2& b) { return a /= b; }

/// Chain rule for a unary primitive with derivatives f1 = phi'(x.v),
/// f2 = phi''(x.v).
inline Dual2 chain(const Dual2& x, double value, double f1, double f2) {
  return {value, f1 * x.d1, f2 * x.d1 * x.d1 + f1 * x.d2};
}

inline Dual2 sin(const Dual2& x) {
  const double s = std::sin(x.v), c = std::cos(x.v);
  return chain(x, s, c, -s);
}

inline Dual2 cos(const Dual2& x) {
  const double s = std::sin(x.v), c = std::cos(x.v);
  return chain(x, c, -s, -c);
}

inline Dual2 exp(const Dual2& x) {
  const double e = std::exp(x.v);
  return chain(x, e, e, e);
}

inline Dual2 log(const Dual2& x) {
  if (x.v <= 0.0) throw std::domain_error("dual log: non-positive argument");
  return chain(x, std::log(x.v), 1.0 / x.v, -1.0 / (x.v * x.v));
}

inline Dual2 sqrt(const Dual2& x) {
  if (x.v < 0.0) throw std::domain_error("dual sqrt: negative argument");
  if (x.v == 0.0 && (x.d1 != 0.0 || x.d2 != 0.0))
    throw std::domain_error("dual sqrt: derivative undefined at zero");
  const double r = std::sqrt(x.v);
  return x.v == 0.0 ? Dual2(0.0) : chain(x, r, 0.5 / r, -0.25 / (r * x.v));
}

inline Dual2 tanh(const Dual2& x) {
  const double t = std::tanh(x.v);
  const double s = 1.0 - t * t;
  return chain(x, t, s, -2.0 * t * s);
}

inline Dual2 sigmoid(const Dual2& x) {
  const double s = 1.0 / (1.0 + std::exp(-x.v));
  const double s1 = s * (1.0 - s);
  return chain(x, s, s1, s1 * (1.0 - 2.0 * s));
}

inline Dual2 softplus(const Dual2& x) {
  // log(1+e^x), computed stably; phi' = sigmoid, phi'' = sigmoid'.
  const double sp = x.v > 30.0 ? x.v : std::log1p(std::exp(x.v));
  const double s = 1.0 / (1.0 + std::exp(-x.v));
  return chain(x, sp, s, s * (1.0 - s));
}

inline Dual2 silu(const Dual2& x) { return x * sigmoid(x); }

/// Scalar helpers shared by double and Dual2 code paths (the generic
/// network forward is templated on the scalar type).
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double tanh(double x) { return std::tanh(x); }

/// Value plus first/second time derivatives of a vector-valued curve.
struct Jet {
  Vec value;
  Vec d1;
  Vec d2;
};

/// Evaluates f on the dual variable at t and splits the jet into
/// (value, first, second) derivative vectors.
template <class F>
Jet forward_dual(F&& f, double t) {
  const std::vector<Dual2> out = f(Dual2::variable(t));
  Jet jet;
  jet.value.reserve(out.size());
  jet.d1.reserve(out.size());
  jet.d2.reserve(out.size());
  for (const Dual2& o : out) {
    jet.value.push_back(o.v);
    jet.d1.push_back(o.d1);
    jet.d2.push_back(o.d2);
  }
  return jet;
}

}  // namespace geoflow
