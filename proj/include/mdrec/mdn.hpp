#pragma once

// Mixture density decoders and the diagonal Gaussian mixture log-density.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mdrec/autodiff.hpp"
#include "mdrec/encoders.hpp"
#include "mdrec/parameters.hpp"

namespace mdrec {

inline constexpr double kDefaultVarianceFloor = 1e-4;

/// Plain-value mixture: weights on the simplex, per-component mean and
/// diagonal variance.
struct MixtureParameters {
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  std::vector<std::vector<double>> variances;
  double variance_floor = kDefaultVarianceFloor;

  std::size_t components() const { return weights.size(); }
  std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }

  void validate() const {
    const std::size_t m = components();
    if (m == 0 || means.size() != m || variances.size() != m) {
      throw Error("mixture: inconsistent component count");
    }
    double total = 0.0;
    for (double w : weights) {
      if (!(w > 0.0)) throw Error("mixture: non-positive weight");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-6) throw Error("mixture: weights do not sum to 1");
    for (std::size_t j = 0; j < m; ++j) {
      if (means[j].size() != dim() || variances[j].size() != dim()) {
        throw ShapeError("mixture: component " + std::to_string(j) + " has wrong dimension");
      }
      for (double v : variances[j]) {
        // Floor is added in Real precision, so allow a rounding margin.
        if (!(v >= variance_floor * (1.0 - 1e-6))) {
          throw Error("mixture: variance below floor in component " + std::to_string(j));
        }
      }
    }
  }
};

inline double log_sum_exp(std::span<const double> xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double total = 0.0;
  for (double x : xs) total += std::exp(x - mx);
  return mx + std::log(total);
}

/// log of one diagonal Gaussian kernel at v.
inline double gaussian_log_kernel(std::span<const double> v, std::span<const double> mean,
                                  std::span<const double> variance) {
  double quad = 0.0, log_det = 0.0;
  for (std::size_t d = 0; d < v.size(); ++d) {
    const double diff = v[d] - mean[d];
    quad += diff * diff / variance[d];
    log_det += std::log(variance[d]);
  }
  return -0.5 * (quad + log_det + static_cast<double>(v.size()) * std::log(2.0 * std::numbers::pi));
}

/// log sum_j w_j N(v; mu_j, diag(var_j)), via log-sum-exp.
inline double log_density(std::span<const double> v, const MixtureParameters& params) {
  if (v.size() != params.dim()) {
    throw ShapeError("log_density: vector of dim " + std::to_string(v.size()) + " vs mixture dim " +
                     std::to_string(params.dim()));
  }
  std::vector<double> terms(params.components());
  for (std::size_t j = 0; j < terms.size(); ++j) {
    for (double var : params.variances[j]) {
      if (!(var >= params.variance_floor * (1.0 - 1e-6))) {
        throw Error("log_density: variance below floor");
      }
    }
    terms[j] = std::log(params.weights[j]) + gaussian_log_kernel(v, params.means[j], params.variances[j]);
  }
  return log_sum_exp(terms);
}

/// Mixture parameters as tape nodes.
template <typename Real>
struct MixtureVars {
  ad::Var<Real> log_weights;                        // length m
  std::vector<ad::Var<Real>> means;                 // m vectors of d_emb
  std::vector<ad::Var<Real>> variances;             // m vectors of d_emb
  std::vector<ad::Var<Real>> attention;             // per decoder step, when attending
  double variance_floor = kDefaultVarianceFloor;

  MixtureParameters values() const {
    MixtureParameters out;
    out.variance_floor = variance_floor;
    const auto& lw = log_weights.value();
    for (std::size_t j = 0; j < lw.size(); ++j) out.weights.push_back(std::exp(static_cast<double>(lw[j])));
    for (const auto& mu : means) out.means.emplace_back(mu.value().values().begin(), mu.value().values().end());
    for (const auto& var : variances) {
      out.variances.emplace_back(var.value().values().begin(), var.value().values().end());
    }
    return out;
  }
};

/// Tape version of log_density.
template <typename Real>
ad::Var<Real> log_density(ad::Var<Real> v, const MixtureVars<Real>& mix) {
  using namespace ad;
  const std::size_t m = mix.means.size();
  const Real log_two_pi = static_cast<Real>(std::log(2.0 * std::numbers::pi));
  const Real dim = static_cast<Real>(v.size());
  std::vector<Var<Real>> terms;
  terms.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    auto diff = sub(v, mix.means[j]);
    auto quad = sum(div(square(diff), mix.variances[j]));
    auto log_det = sum(log(mix.variances[j]));
    auto kernel = add_constant(scale(add(quad, log_det), Real{-0.5}), Real{-0.5} * dim * log_two_pi);
    terms.push_back(add(slice(mix.log_weights, j, 1), kernel));
  }
  return logsumexp(concat(terms));
}

// ---------------------------------------------------------------------------
// Feedforward decoder: independent W_mu_i, W_sigma_i, W_alpha_i per component.

struct DecoderShape {
  std::size_t components = 1;
  std::size_t d_emb = 0;
  std::size_t d_hidden = 0;
};

template <typename Real, typename G>
void add_ff_decoder_parameters(ParameterStore<Real>& store, DecoderShape s, Real init_scale, G& rng) {
  for (std::size_t i = 0; i < s.components; ++i) {
    const std::string k = std::to_string(i);
    store.add_uniform("ff.W_mu." + k, {s.d_emb, s.d_hidden}, init_scale, rng);
    store.add_uniform("ff.W_sigma." + k, {s.d_emb, s.d_hidden}, init_scale, rng);
    store.add_uniform("ff.W_alpha." + k, {1, s.d_hidden}, init_scale, rng);
  }
}

/// mu_i = tanh(W_mu_i p), var_i = softplus(W_sigma_i p) + floor,
/// alpha = softmax_i(W_alpha_i p).
template <typename Real>
MixtureVars<Real> decode_ff(ad::Var<Real> p, const ParameterStore<Real>& store, std::size_t components,
                            double variance_floor = kDefaultVarianceFloor) {
  using namespace ad;
  if (components == 0) throw Error("decode_ff: need at least one component");
  Tape<Real>& tape = *p.tape;
  MixtureVars<Real> mix;
  mix.variance_floor = variance_floor;
  std::vector<Var<Real>> logits;
  for (std::size_t i = 0; i < components; ++i) {
    const std::string k = std::to_string(i);
    auto W_mu = tape.param(store, "ff.W_mu." + k);
    if (W_mu.shape()[1] != p.size() || p.shape().size() != 1) {
      throw ShapeError("decode_ff: input of shape " + shape_string(p.shape()) + " vs W_mu " +
                       shape_string(W_mu.shape()));
    }
    mix.means.push_back(tanh(matmul(W_mu, p)));
    mix.variances.push_back(
        add_constant(softplus(matmul(tape.param(store, "ff.W_sigma." + k), p)), static_cast<Real>(variance_floor)));
    logits.push_back(matmul(tape.param(store, "ff.W_alpha." + k), p));
  }
  mix.log_weights = log_softmax(concat(logits));
  return mix;
}

// ---------------------------------------------------------------------------
// Recurrent decoder: one GRU step per component with shared output weights.

enum class ScorerKind { Dot, Additive };

template <typename Real, typename G>
void add_rnn_decoder_parameters(ParameterStore<Real>& store, DecoderShape s, Real init_scale, G& rng) {
  add_gru_parameters(store, "dec.gru.", GruShape{s.d_hidden, s.d_hidden}, init_scale, rng);
  store.add_uniform("dec.W_mu", {s.d_emb, s.d_hidden}, init_scale, rng);
  store.add_uniform("dec.W_sigma", {s.d_emb, s.d_hidden}, init_scale, rng);
  store.add_uniform("dec.W_alpha", {1, s.d_hidden}, init_scale, rng);
}

/// Weights of the additive scorer v . tanh(W_a a + W_s s).
template <typename Real, typename G>
void add_additive_scorer_parameters(ParameterStore<Real>& store, std::size_t annotation_dim,
                                    std::size_t state_dim, std::size_t attention_dim, Real init_scale, G& rng) {
  store.add_uniform("att.score.W_a", {attention_dim, annotation_dim}, init_scale, rng);
  store.add_uniform("att.score.W_s", {attention_dim, state_dim}, init_scale, rng);
  store.add_uniform("att.score.v", {1, attention_dim}, init_scale, rng);
}

template <typename Real>
struct AttentionScorer {
  ScorerKind kind = ScorerKind::Dot;
  ad::Var<Real> W_a{}, W_s{}, v{};

  static AttentionScorer dot() { return {}; }
  static AttentionScorer additive(ad::Tape<Real>& tape, const ParameterStore<Real>& store) {
    return {ScorerKind::Additive, tape.param(store, "att.score.W_a"), tape.param(store, "att.score.W_s"),
            tape.param(store, "att.score.v")};
  }
};

/// Relevance of annotation `a` to decoder state `state`.
template <typename Real>
ad::Var<Real> score_attention(ad::Var<Real> a, ad::Var<Real> state, const AttentionScorer<Real>& scorer = {}) {
  using namespace ad;
  if (scorer.kind == ScorerKind::Dot) {
    if (a.shape() != state.shape()) {
      throw ShapeError("score_attention: annotation " + shape_string(a.shape()) + " vs state " +
                       shape_string(state.shape()));
    }
    return dot(a, state);
  }
  return matmul(scorer.v, tanh(add(matmul(scorer.W_a, a), matmul(scorer.W_s, state))));
}

/// Z (recurrent states) and A (annotations) for an attending decoder.
template <typename Real>
struct AttentionMemory {
  std::vector<ad::Var<Real>> states;
  std::vector<ad::Var<Real>> annotations;
};

namespace detail {

template <typename Real>
MixtureVars<Real> decode_rnn_impl(ad::Tape<Real>& tape, const ad::Var<Real>* pooled,
                                  const AttentionMemory<Real>* memory, const AttentionScorer<Real>& scorer,
                                  const ParameterStore<Real>& store, std::size_t components, double variance_floor) {
  using namespace ad;
  if (components == 0) throw Error("decode_rnn: need at least one component");
  const auto cell = GruCell<Real>::bind(tape, store, "dec.gru.");
  const auto W_mu = tape.param(store, "dec.W_mu");
  const auto W_sigma = tape.param(store, "dec.W_sigma");
  const auto W_alpha = tape.param(store, "dec.W_alpha");

  MixtureVars<Real> mix;
  mix.variance_floor = variance_floor;
  auto state = tape.constant(Tensor<Real>({cell.hidden_dim()}));
  std::vector<Var<Real>> logits;
  for (std::size_t l = 0; l < components; ++l) {
    Var<Real> input;
    if (memory) {
      std::vector<Var<Real>> scores;
      for (const auto& a : memory->annotations) scores.push_back(score_attention(a, state, scorer));
      auto weights = softmax(concat(scores));
      mix.attention.push_back(weights);
      input = scale_by(memory->states[0], slice(weights, 0, 1));
      for (std::size_t i = 1; i < memory->states.size(); ++i) {
        input = add(input, scale_by(memory->states[i], slice(weights, i, 1)));
      }
    } else {
      input = *pooled;
    }
    state = gru_step(input, state, cell);
    mix.means.push_back(tanh(matmul(W_mu, state)));
    mix.variances.push_back(add_constant(softplus(matmul(W_sigma, state)), static_cast<Real>(variance_floor)));
    logits.push_back(matmul(W_alpha, state));
  }
  // Mixture weights only after every component state exists.
  mix.log_weights = log_softmax(concat(logits));
  return mix;
}

}  // namespace detail

/// Recurrent decoder fed the same pooled history vector at every step.
template <typename Real>
MixtureVars<Real> decode_rnn(ad::Var<Real> pooled, const ParameterStore<Real>& store, std::size_t components,
                             double variance_floor = kDefaultVarianceFloor) {
  return detail::decode_rnn_impl<Real>(*pooled.tape, &pooled, nullptr, AttentionScorer<Real>{}, store, components,
                                       variance_floor);
}

/// Recurrent decoder whose step l reads sum_i att_{l,i} z_i, with
/// att_{l,.} = softmax_i score(a_i, m_{l-1}).
template <typename Real>
MixtureVars<Real> decode_rnn(const AttentionMemory<Real>& memory, const AttentionScorer<Real>& scorer,
                             const ParameterStore<Real>& store, std::size_t components,
                             double variance_floor = kDefaultVarianceFloor) {
  if (memory.states.empty() || memory.states.size() != memory.annotations.size()) {
    throw Error("decode_rnn: attention needs a non-empty history with one annotation per state");
  }
  return detail::decode_rnn_impl<Real>(*memory.states.front().tape, nullptr, &memory, scorer, store, components,
                                       variance_floor);
}

}  // namespace mdrec
