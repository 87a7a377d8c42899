#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "geoflow/dual.hpp"
#include "geoflow/rng.hpp"
#include "geoflow/tape.hpp"
#include "geoflow/vec.hpp"

namespace geoflow {

enum class Activation { tanh, silu };

inline ActKind to_act_kind(Activation a) {
  return a == Activation::tanh ? ActKind::tanh : ActKind::silu;
}

/// Shape and seed of a fully-connected network. Initialization is a
/// pure function of the seed; the output layer starts at zero so a
/// fresh network is exactly the zero map.
struct MlpSpec {
  int input_dim = 1;
  std::vector<int> hidden;
  int output_dim = 1;
  Activation activation = Activation::silu;
  std::uint64_t seed = 0;

  void validate() const {
    if (input_dim < 1 || output_dim < 1)
      throw std::invalid_argument("MlpSpec: dims must be >= 1");
    for (int h : hidden)
      if (h < 1) throw std::invalid_argument("MlpSpec: hidden dims must be >= 1");
  }

  std::vector<std::pair<int, int>> layer_shapes() const {
    std::vector<std::pair<int, int>> shapes;  // (rows, cols)
    int in = input_dim;
    for (int h : hidden) {
      shapes.emplace_back(h, in);
      in = h;
    }
    shapes.emplace_back(output_dim, in);
    return shapes;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (auto [r, c] : layer_shapes()) n += static_cast<std::size_t>(r) * c + r;
    return n;
  }

  bool operator==(const MlpSpec&) const = default;
};

/// Xavier-uniform weights, zero biases, zero final layer.
inline Vec init_params(const MlpSpec& spec) {
  spec.validate();
  Vec params(spec.param_count(), 0.0);
  CounterRng rng(spec.seed, 0x6d6c70);
  const auto shapes = spec.layer_shapes();
  std::size_t off = 0;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto [rows, cols] = shapes[l];
    const std::size_t wn = static_cast<std::size_t>(rows) * cols;
    if (l + 1 < shapes.size()) {
      const double bound = std::sqrt(6.0 / (rows + cols));
      for (std::size_t i = 0; i < wn; ++i) params[off + i] = rng.uniform(-bound, bound);
    }
    off += wn + rows;  // biases (and the final layer) stay zero
  }
  return params;
}

/// Plain forward pass, templated so the same code path runs on double
/// and on Dual2 scalars (time derivatives via forward mode).
template <class T>
std::vector<T> mlp_forward(const MlpSpec& spec, std::span<const double> params,
                           std::span<const T> input) {
  if (params.size() != spec.param_count())
    throw std::invalid_argument("mlp_forward: parameter count mismatch");
  if (static_cast<int>(input.size()) != spec.input_dim)
    throw std::invalid_argument("mlp_forward: input has dim " + std::to_string(input.size()) +
                                ", expected " + std::to_string(spec.input_dim));
  std::vector<T> x(input.begin(), input.end());
  const auto shapes = spec.layer_shapes();
  std::size_t off = 0;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto [rows, cols] = shapes[l];
    std::vector<T> y(static_cast<std::size_t>(rows));
    const double* w = params.data() + off;
    const double* b = params.data() + off + static_cast<std::size_t>(rows) * cols;
    for (int r = 0; r < rows; ++r) {
      T s = T(b[r]);
      const double* wr = w + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) s += T(wr[c]) * x[static_cast<std::size_t>(c)];
      y[static_cast<std::size_t>(r)] = s;
    }
    if (l + 1 < shapes.size()) {
      for (auto& v : y) v = spec.activation == Activation::tanh ? tanh(v) : silu(v);
    }
    x = std::move(y);
    off += static_cast<std::size_t>(rows) * cols + rows;
  }
  return x;
}

/// Tape forward pass: `p` must be a param node holding the flat
/// parameter vector, `input` an existing node of input_dim.
inline Tape::NodeId mlp_forward_tape(Tape& tape, const MlpSpec& spec, Tape::NodeId p,
                                     Tape::NodeId input) {
  Tape::NodeId x = input;
  const auto shapes = spec.layer_shapes();
  std::size_t off = 0;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto [rows, cols] = shapes[l];
    const std::size_t w_off = off;
    const std::size_t b_off = off + static_cast<std::size_t>(rows) * cols;
    x = tape.affine(p, w_off, b_off, x, rows, cols);
    if (l + 1 < shapes.size()) x = tape.activation(x, to_act_kind(spec.activation));
    off = b_off + static_cast<std::size_t>(rows);
  }
  return x;
}

}  // namespace geoflow
