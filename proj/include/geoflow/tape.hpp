#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "geoflow/vec.hpp"

namespace geoflow {

enum class ActKind { tanh, silu, softplus };

/// Reverse-mode tape over a fixed, closed set of vector primitives:
/// affine layers, elementwise activations, add/sub/scale, dot, norm,
/// division by a scalar node, and stop-gradient. Tapes are single-use
/// and confined to one thread; independent tapes may run in parallel.
class Tape {
 public:
  using NodeId = int;

  /// Registers a parameter slot. Gradients accumulate into grad(id).
  NodeId param(std::span<const double> values) {
    return push(Node{Kind::param, -1, -1, Vec(values.begin(), values.end())});
  }

  /// Constant leaf; receives no gradient.
  NodeId input(Vec values) { return push(Node{Kind::input, -1, -1, std::move(values)}); }

  NodeId input(std::span<const double> values) {
    return input(Vec(values.begin(), values.end()));
  }

  /// y = W x + b with W (rows x cols) and b (rows) taken from the
  /// parameter node `p` at offsets w_off / b_off.
  NodeId affine(NodeId p, std::size_t w_off, std::size_t b_off, NodeId x, int rows, int cols) {
    const Vec& pv = at(p).value;
    const Vec& xv = at(x).value;
    if (static_cast<int>(xv.size()) != cols)
      throw std::invalid_argument("tape affine: input has dim " + std::to_string(xv.size()) +
                                  ", expected " + std::to_string(cols));
    if (w_off + static_cast<std::size_t>(rows) * cols > pv.size() ||
        b_off + static_cast<std::size_t>(rows) > pv.size())
      throw std::invalid_argument("tape affine: parameter slice out of range");
    Node n{Kind::affine, p, x, Vec(rows)};
    n.w_off = w_off;
    n.b_off = b_off;
    n.rows = rows;
    n.cols = cols;
    for (int r = 0; r < rows; ++r) {
      double s = pv[b_off + r];
      const double* w = pv.data() + w_off + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) s += w[c] * xv[c];
      n.value[r] = s;
    }
    return push(std::move(n));
  }

  NodeId activation(NodeId x, ActKind kind) {
    const Vec& xv = at(x).value;
    Node n{Kind::act, x, -1, Vec(xv.size())};
    n.act = kind;
    for (std::size_t i = 0; i < xv.size(); ++i) n.value[i] = act_value(kind, xv[i]);
    return push(std::move(n));
  }

  NodeId add(NodeId a, NodeId b) {
    return push(Node{Kind::add, a, b, geoflow::add(at(a).value, at(b).value)});
  }

  NodeId sub(NodeId a, NodeId b) {
    return push(Node{Kind::sub, a, b, geoflow::sub(at(a).value, at(b).value)});
  }

  /// c * x for a plain constant c.
  NodeId scale(NodeId x, double c) {
    Node n{Kind::scale, x, -1, geoflow::scale(at(x).value, c)};
    n.coeff = c;
    return push(std::move(n));
  }

  /// Scalar node <a, b>.
  NodeId dot(NodeId a, NodeId b) {
    return push(Node{Kind::dot, a, b, Vec{geoflow::dot(at(a).value, at(b).value)}});
  }

  /// Scalar node ||a||.
  NodeId norm(NodeId a) {
    const double nv = geoflow::norm(at(a).value);
    if (nv == 0.0) throw std::domain_error("tape norm: gradient undefined at zero vector");
    return push(Node{Kind::norm, a, -1, Vec{nv}});
  }

  /// Elementwise a / s where s is a scalar (1-element) node.
  NodeId div_scalar(NodeId a, NodeId s) {
    const Vec& av = at(a).value;
    const double sv = scalar(s, "tape div_scalar");
    if (sv == 0.0) throw std::domain_error("tape div_scalar: zero denominator");
    Vec out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / sv;
    return push(Node{Kind::div_scalar, a, s, std::move(out)});
  }

  /// Identity forward, blocked backward.
  NodeId stop_grad(NodeId x) { return push(Node{Kind::stop, x, -1, at(x).value}); }

  const Vec& value(NodeId id) const { return at(id).value; }

  double scalar(NodeId id, const char* where = "tape scalar") const {
    const Vec& v = at(id).value;
    if (v.size() != 1) throw std::invalid_argument(std::string(where) + ": node is not a scalar");
    return v[0];
  }

  /// Backpropagates from a scalar node. May be called once per tape.
  void backward(NodeId loss) {
    if (at(loss).value.size() != 1)
      throw std::invalid_argument("tape backward: loss must be a scalar node");
    for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
    nodes_[static_cast<std::size_t>(loss)].grad[0] = 1.0;
    for (int id = loss; id >= 0; --id) backprop_node(id);
  }

  /// Gradient with respect to a param node, valid after backward().
  const Vec& grad(NodeId p) const {
    const Node& n = at(p);
    if (n.kind != Kind::param) throw std::invalid_argument("tape grad: node is not a parameter");
    if (n.grad.empty()) throw std::logic_error("tape grad: backward() has not run");
    return n.grad;
  }

 private:
  enum class Kind { param, input, affine, act, add, sub, scale, dot, norm, div_scalar, stop };

  struct Node {
    Kind kind;
    NodeId a;
    NodeId b;
    Vec value;
    Vec grad;
    std::size_t w_off = 0, b_off = 0;
    int rows = 0, cols = 0;
    ActKind act = ActKind::tanh;
    double coeff = 0.0;
  };

  static double act_value(ActKind k, double x) {
    switch (k) {
      case ActKind::tanh: return std::tanh(x);
      case ActKind::silu: return x / (1.0 + std::exp(-x));
      case ActKind::softplus: return x > 30.0 ? x : std::log1p(std::exp(x));
    }
    return 0.0;
  }

  static double act_deriv(ActKind k, double x) {
    switch (k) {
      case ActKind::tanh: {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      }
      case ActKind::silu: {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      }
      case ActKind::softplus: return 1.0 / (1.0 + std::exp(-x));
    }
    return 0.0;
  }

  NodeId push(Node n) {
    const NodeId id = static_cast<NodeId>(nodes_.size());
    if (!all_finite(n.value))
      throw std::runtime_error("tape: non-finite value in forward pass at node " +
                               std::to_string(id) + " (" + kind_name(n.kind) + ")");
    nodes_.push_back(std::move(n));
    return id;
  }

  static const char* kind_name(Kind k) {
    switch (k) {
      case Kind::param: return "param";
      case Kind::input: return "input";
      case Kind::affine: return "affine";
      case Kind::act: return "activation";
      case Kind::add: return "add";
      case Kind::sub: return "sub";
      case Kind::scale: return "scale";
      case Kind::dot: return "dot";
      case Kind::norm: return "norm";
      case Kind::div_scalar: return "div_scalar";
      case Kind::stop: return "stop_grad";
    }
    return "?";
  }

  const Node& at(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
      throw std::out_of_range("tape: bad node id");
    return nodes_[static_cast<std::size_t>(id)];
  }

  void backprop_node(NodeId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Vec& g = n.grad;
    bool any = false;
    for (double x : g)
      if (x != 0.0) {
        any = true;
        break;
      }
    if (!any) return;
    switch (n.kind) {
      case Kind::param:
      case Kind::input:
      case Kind::stop: break;
      case Kind::affine: {
        Node& p = nodes_[static_cast<std::size_t>(n.a)];
        Node& x = nodes_[static_cast<std::size_t>(n.b)];
        const Vec& pv = p.value;
        for (int r = 0; r < n.rows; ++r) {
          const double gr = g[static_cast<std::size_t>(r)];
          if (gr == 0.0) continue;
          const std::size_t row = n.w_off + static_cast<std::size_t>(r) * n.cols;
          p.grad[n.b_off + static_cast<std::size_t>(r)] += gr;
          for (int c = 0; c < n.cols; ++c) {
            p.grad[row + static_cast<std::size_t>(c)] += gr * x.value[static_cast<std::size_t>(c)];
            x.grad[static_cast<std::size_t>(c)] += gr * pv[row + static_cast<std::size_t>(c)];
          }
        }
        break;
      }
      case Kind::act: {
        Node& x = nodes_[static_cast<std::size_t>(n.a)];
        for (std::size_t i = 0; i < g.size(); ++i)
          x.grad[i] += g[i] * act_deriv(n.act, x.value[i]);
        break;
      }
      case Kind::add: {
        accumulate(n.a, g, 1.0);
        accumulate(n.b, g, 1.0);
        break;
      }
      case Kind::sub: {
        accumulate(n.a, g, 1.0);
        accumulate(n.b, g, -1.0);
        break;
      }
      case Kind::scale: {
        accumulate(n.a, g, n.coeff);
        break;
      }
      case Kind::dot: {
        Node& a = nodes_[static_cast<std::size_t>(n.a)];
        Node& b = nodes_[static_cast<std::size_t>(n.b)];
        const double gs = g[0];
        for (std::size_t i = 0; i < a.value.size(); ++i) {
          a.grad[i] += gs * b.value[i];
          b.grad[i] += gs * a.value[i];
        }
        break;
      }
      case Kind::norm: {
        Node& a = nodes_[static_cast<std::size_t>(n.a)];
        const double gs = g[0] / n.value[0];
        for (std::size_t i = 0; i < a.value.size(); ++i) a.grad[i] += gs * a.value[i];
        break;
      }
      case Kind::div_scalar: {
        Node& a = nodes_[static_cast<std::size_t>(n.a)];
        Node& s = nodes_[static_cast<std::size_t>(n.b)];
        const double sv = s.value[0];
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          a.grad[i] += g[i] / sv;
          acc += g[i] * a.value[i];
        }
        s.grad[0] -= acc / (sv * sv);
        break;
      }
    }
  }

  void accumulate(NodeId target, const Vec& g, double c) {
    Node& t = nodes_[static_cast<std::size_t>(target)];
    for (std::size_t i = 0; i < g.size(); ++i) t.grad[i] += c * g[i];
  }

  std::vector<Node> nodes_;
};

/// Vanilla scalar-node helpers for loss accumulation.
inline Tape::NodeId tape_mean(Tape& tape, const std::vector<Tape::NodeId>& scalars) {
  if (scalars.empty()) throw std::invalid_argument("tape_mean: empty list");
  Tape::NodeId acc = scalars[0];
  for (std::size_t i = 1; i < scalars.size(); ++i) acc = tape.add(acc, scalars[i]);
  return tape.scale(acc, 1.0 / static_cast<double>(scalars.size()));
}

/// Gradient of a scalar loss with respect to a flat parameter vector.
/// `build` receives a fresh tape plus the parameter node and returns
/// the scalar loss node.
template <class Build>
Vec reverse_grad(Build&& build, std::span<const double> params) {
  Tape tape;
  const auto p = tape.param(params);
  const auto loss = build(tape, p);
  tape.backward(loss);
  return tape.grad(p);
}

}  // namespace geoflow
