#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Tape records nodes in creation order, so every node's inputs precede it.
// backward() walks the tape once in reverse and accumulates gradients.

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mdrec/parameters.hpp"
#include "mdrec/tensor.hpp"

namespace mdrec::ad {

template <typename Real>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename Real>
struct Var {
  Tape<Real>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<Real>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

template <typename Real>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  /// In checked mode every primitive output is tested for NaN/Inf.
  explicit Tape(bool checked = false) : checked_(checked) { nodes_.reserve(256); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool checked() const { return checked_; }
  std::size_t node_count() const { return nodes_.size(); }

  /// A leaf that receives a gradient (readable via grad()).
  Var<Real> leaf(Tensor<Real> value) {
    return push("leaf", std::move(value), {}, nullptr);
  }

  /// A leaf whose gradient is never needed.
  Var<Real> constant(Tensor<Real> value) { return leaf(std::move(value)); }

  /// Leaf bound to a named parameter. Repeated requests for the same name
  /// return the same node so gradients from all uses accumulate.
  Var<Real> param(const ParameterStore<Real>& store, const std::string& name) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return {this, it->second};
    Var<Real> v = leaf(store.get(name));
    param_nodes_.emplace(name, v.id);
    return v;
  }

  Var<Real> push(const char* op, Tensor<Real> value,
                 std::vector<std::size_t> inputs, Backward backward) {
    if (checked_ && !value.all_finite()) {
      throw NonFiniteError(std::string(op) + ": non-finite output");
    }
    nodes_.push_back(Node{std::move(value), {}, std::move(inputs), std::move(backward)});
    return {this, nodes_.size() - 1};
  }

  const Tensor<Real>& value(Var<Real> v) const { return nodes_[v.id].value; }
  const Tensor<Real>& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t input(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }
  const Tensor<Real>& grad_of(std::size_t id) const { return nodes_[id].grad; }

  /// Gradient buffer for node `id`, zero-allocated on first use.
  Tensor<Real>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<Real>(n.value.shape());
    return n.grad;
  }

  /// Gradient of the last backward() root w.r.t. `v` (zeros when unused).
  Tensor<Real> grad(Var<Real> v) const {
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? Tensor<Real>(n.value.shape()) : n.grad;
  }

  /// Propagates d(root)/d(node) to every node; root must be a scalar.
  void backward(Var<Real> root) {
    const Tensor<Real>& rv = nodes_[root.id].value;
    if (rv.size() != 1) {
      throw ShapeError("backward: root must be scalar, got shape " +
                       shape_string(rv.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<Real>();
    grad_buffer(root.id)[0] = Real{1};
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// backward() and collect gradients for every parameter in `store`.
  Gradients<Real> gradients(Var<Real> root, const ParameterStore<Real>& store) {
    backward(root);
    Gradients<Real> out;
    for (const auto& [name, t] : store) {
      auto it = param_nodes_.find(name);
      if (it == param_nodes_.end() || nodes_[it->second].grad.empty()) {
        out.add(name, Tensor<Real>(t.shape()));
      } else {
        out.add(name, nodes_[it->second].grad);
      }
    }
    return out;
  }

 private:
  bool checked_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_nodes_;
};

namespace detail {

template <typename Real>
void require_same_tape(const char* op, Var<Real> a, Var<Real> b) {
  if (a.tape != b.tape) throw Error(std::string(op) + ": operands on different tapes");
}

template <typename Real>
void require_same_shape(const char* op, Var<Real> a, Var<Real> b) {
  require_same_tape(op, a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

template <typename Real>
void require_vector(const char* op, Var<Real> a) {
  if (a.shape().size() != 1) {
    throw ShapeError(std::string(op) + ": expected a vector, got shape " +
                     shape_string(a.shape()));
  }
}

/// Elementwise unary op; `df(x, y)` returns dy/dx given input x and output y.
template <typename Real, typename F, typename DF>
Var<Real> unary(const char* op, Var<Real> a, F f, DF df) {
  const Tensor<Real>& x = a.value();
  Tensor<Real> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape->push(op, std::move(y), {a.id}, [df](Tape<Real>& t, std::size_t self) {
    const std::size_t in = t.input(self, 0);
    const Tensor<Real>& g = t.grad_of(self);
    const Tensor<Real>& x = t.value(in);
    const Tensor<Real>& y = t.value(self);
    Tensor<Real>& gx = t.grad_buffer(in);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(x[i], y[i]);
  });
}

template <typename Real>
Real softplus_value(Real x) {
  return x > Real{0} ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename Real>
Real sigmoid_value(Real x) {
  if (x >= Real{0}) return Real{1} / (Real{1} + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real{1} + e);
}

}  // namespace detail

/// Matrix-vector ({r,c}·{c} → {r}) or matrix-matrix ({r,c}·{c,k} → {r,k}).
template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  detail::require_same_tape("matmul", a, b);
  const Tensor<Real>& A = a.value();
  const Tensor<Real>& B = b.value();
  if (A.rank() != 2 || (B.rank() != 1 && B.rank() != 2) || A.cols() != B.rows()) {
    throw ShapeError("matmul: shapes " + shape_string(A.shape()) + " and " +
                     shape_string(B.shape()) + " do not conform");
  }
  const std::size_t r = A.rows(), c = A.cols(), k = B.rank() == 1 ? 1 : B.cols();
  Tensor<Real> y(B.rank() == 1 ? Shape{r} : Shape{r, k});
  for (std::size_t i = 0; i < r; ++i) {
    const Real* arow = A.data() + i * c;
    Real* yrow = y.data() + i * k;
    for (std::size_t j = 0; j < c; ++j) {
      const Real aij = arow[j];
      const Real* brow = B.data() + j * k;
      for (std::size_t l = 0; l < k; ++l) yrow[l] += aij * brow[l];
    }
  }
  return a.tape->push("matmul", std::move(y), {a.id, b.id}, [](Tape<Real>& t, std::size_t self) {
    const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
    const Tensor<Real>& g = t.grad_of(self);
    const Tensor<Real>& A = t.value(ia);
    const Tensor<Real>& B = t.value(ib);
    const std::size_t r = A.rows(), c = A.cols(), k = B.rank() == 1 ? 1 : B.cols();
    Tensor<Real>& gA = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i) {
      const Real* grow = g.data() + i * k;
      Real* garow = gA.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) {
        const Real* brow = B.data() + j * k;
        Real acc{0};
        for (std::size_t l = 0; l < k; ++l) acc += grow[l] * brow[l];
        garow[j] += acc;
      }
    }
    Tensor<Real>& gB = t.grad_buffer(ib);
    for (std::size_t i = 0; i < r; ++i) {
      const Real* arow = A.data() + i * c;
      const Real* grow = g.data() + i * k;
      for (std::size_t j = 0; j < c; ++j) {
        const Real aij = arow[j];
        Real* gbrow = gB.data() + j * k;
        for (std::size_t l = 0; l < k; ++l) gbrow[l] += aij * grow[l];
      }
    }
  });
}

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  detail::require_same_shape("add", a, b);
  Tensor<Real> y = a.value();
  y += b.value();
  return a.tape->push("add", std::move(y), {a.id, b.id}, [](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad_of(self);
    t.grad_buffer(t.input(self, 0)) += g;
    t.grad_buffer(t.input(self, 1)) += g;
  });
}

template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  detail::require_same_shape("sub", a, b);
  const Tensor<Real>& x = a.value();
  const Tensor<Real>& z = b.value();
  Tensor<Real> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] - z[i];
  return a.tape->push("sub", std::move(y), {a.id, b.id}, [](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad_of(self);
    Tensor<Real>& ga = t.grad_buffer(t.input(self, 0));
    Tensor<Real>& gb = t.grad_buffer(t.input(self, 1));
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
}

/// Elementwise product.
template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  detail::require_same_shape("mul", a, b);
  const Tensor<Real>& x = a.value();
  const Tensor<Real>& z = b.value();
  Tensor<Real> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
  return a.tape->push("mul", std::move(y), {a.id, b.id}, [](Tape<Real>& t, std::size_t self) {
    const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
    const Tensor<Real>& g = t.grad_of(self);
    const Tensor<Real>& x = t.value(ia);
    const Tensor<Real>& z = t.value(ib);
    Tensor<Real>& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * z[i];
    Tensor<Real>& gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
  });
}

/// Elementwise quotient.
template <typename Real>
Var<Real> div(Var<Real> a, Var<Real> b) {
  detail::require_same_shape("div", a, b);
  const Tensor<Real>& x = a.value();
  const Tensor<Real>& z = b.value();
  Tensor<Real> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] / z[i];
  return a.tape->push("div", std::move(y), {a.id, b.id}, [](Tape<Real>& t, std::size_t self) {
    const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
    const Tensor<Real>& g = t.grad_of(self);
    const Tensor<Real>& z = t.value(ib);
    const Tensor<Real>& y = t.value(self);
    Tensor<Real>& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / z[i];
    Tensor<Real>& gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * y[i] / z[i];
  });
}

/// Every element of `a` multiplied by the single value held in `s`.
template <typename Real>
Var<Real> scale_by(Var<Real> a, Var<Real> s) {
  detail::require_same_tape("scale_by", a, s);
  if (s.size() != 1) {
    throw ShapeError("scale_by: scale must be scalar, got shape " + shape_string(s.shape()));
  }
  Tensor<Real> y = a.value();
  y *= s.value()[0];
  return a.tape->push("scale_by", std::move(y), {a.id, s.id}, [](Tape<Real>& t, std::size_t self) {
    const std::size_t ia = t.input(self, 0), is = t.input(self, 1);
    const Tensor<Real>& g = t.grad_of(self);
    const Tensor<Real>& x = t.value(ia);
    const Real sv = t.value(is)[0];
    Tensor<Real>& ga = t.grad_buffer(ia);
    Real acc{0};
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * sv;
      acc += g[i] * x[i];
    }
    t.grad_buffer(is)[0] += acc;
  });
}

/// Multiply by a constant.
template <typename Real>
Var<Real> scale(Var<Real> a, Real c) {
  return detail::unary<Real>("scale", a, [c](Real x) { return c * x; },
                             [c](Real, Real) { return c; });
}

/// Add a constant to every element.
template <typename Real>
Var<Real> add_constant(Var<Real> a, Real c) {
  return detail::unary<Real>("add_constant", a, [c](Real x) { return x + c; },
                             [](Real, Real) { return Real{1}; });
}

template <typename Real>
Var<Real> square(Var<Real> a) {
  return detail::unary<Real>("square", a, [](Real x) { return x * x; },
                             [](Real x, Real) { return Real{2} * x; });
}

template <typename Real>
Var<Real> sigmoid(Var<Real> a) {
  return detail::unary<Real>("sigmoid", a, [](Real x) { return detail::sigmoid_value(x); },
                             [](Real, Real y) { return y * (Real{1} - y); });
}

template <typename Real>
Var<Real> tanh(Var<Real> a) {
  return detail::unary<Real>("tanh", a, [](Real x) { return std::tanh(x); },
                             [](Real, Real y) { return Real{1} - y * y; });
}

template <typename Real>
Var<Real> exp(Var<Real> a) {
  return detail::unary<Real>("exp", a, [](Real x) { return std::exp(x); },
                             [](Real, Real y) { return y; });
}

template <typename Real>
Var<Real> log(Var<Real> a) {
  return detail::unary<Real>("log", a, [](Real x) { return std::log(x); },
                             [](Real x, Real) { return Real{1} / x; });
}

/// log(1 + exp(x)), computed without overflow.
template <typename Real>
Var<Real> softplus(Var<Real> a) {
  return detail::unary<Real>("softplus", a, [](Real x) { return detail::softplus_value(x); },
                             [](Real x, Real) { return detail::sigmoid_value(x); });
}

template <typename Real>
Var<Real> sum(Var<Real> a) {
  const Tensor<Real>& x = a.value();
  Real acc{0};
  for (Real v : x.values()) acc += v;
  return a.tape->push("sum", Tensor<Real>::scalar(acc), {a.id}, [](Tape<Real>& t, std::size_t self) {
    const Real g = t.grad_of(self)[0];
    for (auto& v : t.grad_buffer(t.input(self, 0)).values()) v += g;
  });
}

template <typename Real>
Var<Real> mean(Var<Real> a) {
  return scale(sum(a), Real{1} / static_cast<Real>(a.size()));
}

template <typename Real>
Var<Real> dot(Var<Real> a, Var<Real> b) {
  detail::require_same_shape("dot", a, b);
  const Real y = mdrec::dot<Real>(a.value().values(), b.value().values());
  return a.tape->push("dot", Tensor<Real>::scalar(y), {a.id, b.id}, [](Tape<Real>& t, std::size_t self) {
    const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
    const Real g = t.grad_of(self)[0];
    const Tensor<Real>& x = t.value(ia);
    const Tensor<Real>& z = t.value(ib);
    Tensor<Real>& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * z[i];
    Tensor<Real>& gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < x.size(); ++i) gb[i] += g * x[i];
  });
}

/// Softmax over a vector, max-subtracted.
template <typename Real>
Var<Real> softmax(Var<Real> a) {
  detail::require_vector("softmax", a);
  const Tensor<Real>& x = a.value();
  Tensor<Real> y(x.shape());
  const Real mx = *std::max_element(x.values().begin(), x.values().end());
  Real total{0};
  for (std::size_t i = 0; i < x.size(); ++i) total += (y[i] = std::exp(x[i] - mx));
  y *= Real{1} / total;
  return a.tape->push("softmax", std::move(y), {a.id}, [](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad_of(self);
    const Tensor<Real>& y = t.value(self);
    const Real gy = mdrec::dot<Real>(g.values(), y.values());
    Tensor<Real>& gx = t.grad_buffer(t.input(self, 0));
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += y[i] * (g[i] - gy);
  });
}

/// log(softmax(x)) computed as x - logsumexp(x).
template <typename Real>
Var<Real> log_softmax(Var<Real> a) {
  detail::require_vector("log_softmax", a);
  const Tensor<Real>& x = a.value();
  const Real mx = *std::max_element(x.values().begin(), x.values().end());
  Real total{0};
  for (Real v : x.values()) total += std::exp(v - mx);
  const Real lse = mx + std::log(total);
  Tensor<Real> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - lse;
  return a.tape->push("log_softmax", std::move(y), {a.id}, [](Tape<Real>& t, std::size_t self) {
    const Tensor<Real>& g = t.grad_of(self);
    const Tensor<Real>& y = t.value(self);
    Real gsum{0};
    for (Real v : g.values()) gsum += v;
    Tensor<Real>& gx = t.grad_buffer(t.input(self, 0));
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] - std::exp(y[i]) * gsum;
  });
}

/// log(sum(exp(x))) over a vector, max-subtracted.
template <typename Real>
Var<Real> logsumexp(Var<Real> a) {
  detail::require_vector("logsumexp", a);
  const Tensor<Real>& x = a.value();
  const Real mx = *std::max_element(x.values().begin(), x.values().end());
  Real total{0};
  for (Real v : x.values()) total += std::exp(v - mx);
  const Real lse = mx + std::log(total);
  return a.tape->push("logsumexp", Tensor<Real>::scalar(lse), {a.id}, [](Tape<Real>& t, std::size_t self) {
    const std::size_t in = t.input(self, 0);
    const Real g = t.grad_of(self)[0];
    const Real lse = t.value(self)[0];
    const Tensor<Real>& x = t.value(in);
    Tensor<Real>& gx = t.grad_buffer(in);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g * std::exp(x[i] - lse);
  });
}

/// Concatenates flat tensors into one vector.
template <typename Real>
Var<Real> concat(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  std::vector<Real> out;
  std::vector<std::size_t> ids;
  ids.reserve(parts.size());
  for (const auto& p : parts) {
    detail::require_same_tape("concat", parts.front(), p);
    const auto vals = p.value().values();
    out.insert(out.end(), vals.begin(), vals.end());
    ids.push_back(p.id);
  }
  return parts.front().tape->push(
      "concat", Tensor<Real>::vector(std::move(out)), std::move(ids),
      [](Tape<Real>& t, std::size_t self) {
        const Tensor<Real>& g = t.grad_of(self);
        std::size_t offset = 0;
        for (std::size_t k = 0;; ++k) {
          if (offset >= g.size()) break;
          Tensor<Real>& gi = t.grad_buffer(t.input(self, k));
          for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[offset + i];
          offset += gi.size();
        }
      });
}

/// Elements [offset, offset+length) of a flat tensor, as a vector.
template <typename Real>
Var<Real> slice(Var<Real> a, std::size_t offset, std::size_t length) {
  const Tensor<Real>& x = a.value();
  if (length == 0 || offset + length > x.size()) {
    throw ShapeError("slice: range [" + std::to_string(offset) + ", " +
                     std::to_string(offset + length) + ") outside shape " +
                     shape_string(x.shape()));
  }
  std::vector<Real> y(x.data() + offset, x.data() + offset + length);
  return a.tape->push("slice", Tensor<Real>::vector(std::move(y)), {a.id},
                      [offset](Tape<Real>& t, std::size_t self) {
                        const Tensor<Real>& g = t.grad_of(self);
                        Tensor<Real>& gx = t.grad_buffer(t.input(self, 0));
                        for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
                      });
}

}  // namespace mdrec::ad
