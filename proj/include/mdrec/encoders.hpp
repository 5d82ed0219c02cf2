#pragma once

// History encoders: bag of items, GRU reader with mean pooling, and the
// bidirectional GRU annotator used by attention.

#include <string>
#include <vector>

#include "mdrec/autodiff.hpp"
#include "mdrec/data.hpp"
#include "mdrec/embeddings.hpp"
#include "mdrec/parameters.hpp"

namespace mdrec {

struct GruShape {
  std::size_t input = 0;
  std::size_t hidden = 0;
};

/// Registers W_r, U_r, W_u, U_u, W, U under `prefix`.
template <typename Real, typename G>
void add_gru_parameters(ParameterStore<Real>& store, const std::string& prefix, GruShape shape,
                        Real init_scale, G& rng) {
  for (const char* name : {"W_r", "W_u", "W"}) {
    store.add_uniform(prefix + name, {shape.hidden, shape.input}, init_scale, rng);
  }
  for (const char* name : {"U_r", "U_u", "U"}) {
    store.add_uniform(prefix + name, {shape.hidden, shape.hidden}, init_scale, rng);
  }
}

/// A GRU cell's weights bound to a tape.
template <typename Real>
struct GruCell {
  ad::Var<Real> W_r, U_r, W_u, U_u, W, U;

  static GruCell bind(ad::Tape<Real>& tape, const ParameterStore<Real>& store, const std::string& prefix) {
    return {tape.param(store, prefix + "W_r"), tape.param(store, prefix + "U_r"),
            tape.param(store, prefix + "W_u"), tape.param(store, prefix + "U_u"),
            tape.param(store, prefix + "W"),   tape.param(store, prefix + "U")};
  }

  std::size_t input_dim() const { return W.shape()[1]; }
  std::size_t hidden_dim() const { return W.shape()[0]; }
};

/// One GRU update. The reset gate also multiplies the state inside the
/// update gate's recurrent term:
///   r = sigmoid(W_r x + U_r h)
///   u = sigmoid(W_u x + U_u (r*h))
///   c = tanh(W x + U (r*h))
///   h' = (1-u)*h + u*c
template <typename Real>
ad::Var<Real> gru_step(ad::Var<Real> x, ad::Var<Real> h, const GruCell<Real>& cell) {
  if (x.shape() != Shape{cell.input_dim()} || h.shape() != Shape{cell.hidden_dim()}) {
    throw ShapeError("gru_step: input " + shape_string(x.shape()) + " / state " + shape_string(h.shape()) +
                     " do not match cell " + std::to_string(cell.input_dim()) + "->" +
                     std::to_string(cell.hidden_dim()));
  }
  using namespace ad;
  auto r = sigmoid(add(matmul(cell.W_r, x), matmul(cell.U_r, h)));
  auto rh = mul(r, h);
  auto u = sigmoid(add(matmul(cell.W_u, x), matmul(cell.U_u, rh)));
  auto candidate = tanh(add(matmul(cell.W, x), matmul(cell.U, rh)));
  return add(h, mul(u, sub(candidate, h)));
}

/// Runs `cell` over `inputs` from a zero state; returns every state.
template <typename Real>
std::vector<ad::Var<Real>> gru_states(const std::vector<ad::Var<Real>>& inputs, const GruCell<Real>& cell) {
  if (inputs.empty()) throw Error("gru: empty input sequence");
  ad::Tape<Real>& tape = *inputs.front().tape;
  auto h = tape.constant(Tensor<Real>({cell.hidden_dim()}));
  std::vector<ad::Var<Real>> states;
  states.reserve(inputs.size());
  for (const auto& x : inputs) {
    h = gru_step(x, h, cell);
    states.push_back(h);
  }
  return states;
}

/// Continuous bag of items: sum of item vectors weighted by frequency.
template <typename Real = double>
Tensor<Real> encode_cboi(const std::vector<ItemIndex>& history, const EmbeddingMatrix& E) {
  if (history.empty()) throw Error("encode_cboi: empty history");
  Tensor<Real> p({E.dim()});
  for (ItemIndex item : history) {
    auto row = E.row(item);
    for (std::size_t d = 0; d < row.size(); ++d) p[d] += static_cast<Real>(row[d]);
  }
  return p;
}

/// Embedded history as tape constants (embeddings are never trained here).
template <typename Real>
std::vector<ad::Var<Real>> embed_history(ad::Tape<Real>& tape, const std::vector<ItemIndex>& history,
                                         const EmbeddingMatrix& E) {
  std::vector<ad::Var<Real>> out;
  out.reserve(history.size());
  for (ItemIndex item : history) out.push_back(tape.constant(E.lookup<Real>(item)));
  return out;
}

template <typename Real>
struct RecurrentEncoding {
  std::vector<ad::Var<Real>> states;  // z_1 .. z_{t-1}
  ad::Var<Real> pooled;               // mean of states
};

template <typename Real>
ad::Var<Real> mean_of(const std::vector<ad::Var<Real>>& vs) {
  auto acc = vs.front();
  for (std::size_t i = 1; i < vs.size(); ++i) acc = ad::add(acc, vs[i]);
  return vs.size() == 1 ? acc : ad::scale(acc, Real{1} / static_cast<Real>(vs.size()));
}

template <typename Real>
RecurrentEncoding<Real> encode_recurrent(const std::vector<ad::Var<Real>>& history, const GruCell<Real>& cell) {
  if (history.empty()) throw Error("encode_recurrent: empty history");
  auto states = gru_states(history, cell);
  auto pooled = mean_of(states);
  return {std::move(states), pooled};
}

/// a_i = [forward state at i ; backward state at i].
template <typename Real>
std::vector<ad::Var<Real>> encode_annotations(const std::vector<ad::Var<Real>>& history,
                                              const GruCell<Real>& forward, const GruCell<Real>& backward) {
  if (history.empty()) throw Error("encode_annotations: empty history");
  auto fwd = gru_states(history, forward);
  std::vector<ad::Var<Real>> reversed(history.rbegin(), history.rend());
  auto bwd = gru_states(reversed, backward);
  const std::size_t n = history.size();
  std::vector<ad::Var<Real>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(ad::concat<Real>({fwd[i], bwd[n - 1 - i]}));
  return out;
}

}  // namespace mdrec
