#pragma once

#include <cmath>
#include <cstdint>

#include "mdrec/parameters.hpp"

namespace mdrec {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm clip; <= 0 disables it.
  double clip_norm = 0.0;
  /// Reject non-finite gradients instead of applying them.
  bool checked = false;
};

template <typename Real>
struct AdamState {
  std::uint64_t step = 0;
  ParameterStore<Real> first_moment;
  ParameterStore<Real> second_moment;

  AdamState() = default;
  explicit AdamState(const ParameterStore<Real>& params)
      : first_moment(params.zeros_like()), second_moment(params.zeros_like()) {}
};

template <typename Real>
double global_norm(const Gradients<Real>& grads) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) {
    for (Real v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(sq);
}

/// One bias-corrected Adam update of `params` in place.
template <typename Real>
void adam_step(ParameterStore<Real>& params, const Gradients<Real>& grads,
               AdamState<Real>& state, const AdamConfig& cfg) {
  if (state.first_moment.size() != params.size()) {
    state = AdamState<Real>(params);
  }
  double clip_scale = 1.0;
  if (cfg.checked || cfg.clip_norm > 0.0) {
    const double norm = global_norm(grads);
    if (cfg.checked && !std::isfinite(norm)) {
      throw NonFiniteError("adam_step: non-finite gradient");
    }
    if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) clip_scale = cfg.clip_norm / norm;
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);

  for (auto& [name, p] : params) {
    const Tensor<Real>& g = grads.get(name);
    p.require_same_shape("adam_step", g);
    Tensor<Real>& m = state.first_moment.get(name);
    Tensor<Real>& v = state.second_moment.get(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]) * clip_scale;
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double m_hat = mi / bias1;
      const double v_hat = vi / bias2;
      p[i] = static_cast<Real>(p[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
  }
}

}  // namespace mdrec
