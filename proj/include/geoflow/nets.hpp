#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "geoflow/dual.hpp"
#include "geoflow/mlp.hpp"
#include "geoflow/vec.hpp"

namespace geoflow {

/// Correction network phi(x0, x1, t) with the boundary constraint
/// phi(.,.,0) = phi(.,.,1) = 0 enforced architecturally through the
/// envelope e(t) = t(1-t). Both the teacher and the student corrector
/// are instances of this type.
struct CorrectorNet {
  MlpSpec spec;
  Vec params;

  int dim() const { return spec.output_dim; }

  static CorrectorNet create(int dim, std::vector<int> hidden, Activation act,
                             std::uint64_t seed) {
    CorrectorNet net;
    net.spec = MlpSpec{2 * dim + 1, std::move(hidden), dim, act, seed};
    net.params = init_params(net.spec);
    return net;
  }

  void check_io(std::span<const double> x0, std::span<const double> x1) const {
    if (static_cast<int>(x0.size()) != dim() || static_cast<int>(x1.size()) != dim())
      throw std::invalid_argument("CorrectorNet: endpoint dim " + std::to_string(x0.size()) +
                                  "/" + std::to_string(x1.size()) + ", expected " +
                                  std::to_string(dim()));
  }
};

/// e(t) * rawMLP(x0, x1, t); exactly zero at t in {0,1}.
inline Vec corrector_eval(const CorrectorNet& net, std::span<const double> x0,
                          std::span<const double> x1, double t) {
  net.check_io(x0, x1);
  const double env = t * (1.0 - t);
  if (env == 0.0) return Vec(static_cast<std::size_t>(net.dim()), 0.0);
  Vec in = concat(x0, x1);
  in.push_back(t);
  Vec out = mlp_forward<double>(net.spec, net.params, in);
  for (auto& v : out) v *= env;
  return out;
}

/// Exact d/dt [e(t) * rawMLP(x0, x1, t)] via second-order forward mode.
inline Vec corrector_time_derivative(const CorrectorNet& net, std::span<const double> x0,
                                     std::span<const double> x1, double t) {
  net.check_io(x0, x1);
  std::vector<Dual2> in;
  in.reserve(static_cast<std::size_t>(net.spec.input_dim));
  for (double v : x0) in.emplace_back(v);
  for (double v : x1) in.emplace_back(v);
  const Dual2 td = Dual2::variable(t);
  in.push_back(td);
  const Dual2 env = td * (Dual2(1.0) - td);
  const std::vector<Dual2> raw = mlp_forward<Dual2>(net.spec, net.params, in);
  Vec out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (env * raw[i]).d1;
  return out;
}

/// Value and first two time derivatives of the corrected interpolant
///   gamma(t) = (1-t) x0 + t x1 + e(t) rawMLP(x0, x1, t).
inline Jet interpolant_jet(const CorrectorNet& net, std::span<const double> x0,
                           std::span<const double> x1, double t) {
  net.check_io(x0, x1);
  return forward_dual(
      [&](Dual2 td) {
        std::vector<Dual2> in;
        in.reserve(static_cast<std::size_t>(net.spec.input_dim));
        for (double v : x0) in.emplace_back(v);
        for (double v : x1) in.emplace_back(v);
        in.push_back(td);
        const Dual2 env = td * (Dual2(1.0) - td);
        std::vector<Dual2> out = mlp_forward<Dual2>(net.spec, net.params, in);
        for (std::size_t i = 0; i < out.size(); ++i)
          out[i] = (Dual2(1.0) - td) * Dual2(x0[i]) + td * Dual2(x1[i]) + env * out[i];
        return out;
      },
      t);
}

/// Conditional velocity field v(x, t, c) trained by flow matching.
struct VelocityNet {
  MlpSpec spec;
  Vec params;
  int state_dim = 0;
  int cond_dim = 0;

  static VelocityNet create(int state_dim, int cond_dim, std::vector<int> hidden, Activation act,
                            std::uint64_t seed) {
    VelocityNet net;
    net.state_dim = state_dim;
    net.cond_dim = cond_dim;
    net.spec = MlpSpec{state_dim + 1 + cond_dim, std::move(hidden), state_dim, act, seed};
    net.params = init_params(net.spec);
    return net;
  }
};

inline Vec velocity_eval(const VelocityNet& net, std::span<const double> x, double t,
                         std::span<const double> c) {
  if (static_cast<int>(x.size()) != net.state_dim)
    throw std::invalid_argument("velocity_eval: state dim " + std::to_string(x.size()) +
                                ", expected " + std::to_string(net.state_dim));
  if (static_cast<int>(c.size()) != net.cond_dim)
    throw std::invalid_argument("velocity_eval: condition dim " + std::to_string(c.size()) +
                                ", expected " + std::to_string(net.cond_dim));
  Vec in = concat(x, Vec{t});
  in = concat(in, c);
  return mlp_forward<double>(net.spec, net.params, in);
}

}  // namespace geoflow
