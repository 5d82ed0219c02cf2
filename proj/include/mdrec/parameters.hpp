#pragma once

#include <map>
#include <random>
#include <string>

#include "mdrec/tensor.hpp"

namespace mdrec {

/// Named trainable tensors. Iteration order is by name, which keeps
/// optimizer updates and checkpoints deterministic.
template <typename Real>
class ParameterStore {
 public:
  using Map = std::map<std::string, Tensor<Real>>;

  Tensor<Real>& add(const std::string& name, Tensor<Real> value) {
    auto [it, inserted] = tensors_.emplace(name, std::move(value));
    if (!inserted) throw Error("parameter '" + name + "' already exists");
    return it->second;
  }

  /// Adds a tensor initialized uniformly in [-scale, scale].
  template <typename Rng>
  Tensor<Real>& add_uniform(const std::string& name, Shape shape, Real scale,
                            Rng& rng) {
    Tensor<Real> t(std::move(shape));
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (auto& v : t.values()) v = static_cast<Real>(dist(rng));
    return add(name, std::move(t));
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  Tensor<Real>& operator[](const std::string& name) { return get(name); }
  const Tensor<Real>& operator[](const std::string& name) const { return get(name); }

  Tensor<Real>& get(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor<Real>& get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }

  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  /// Same names and shapes, all zeros.
  ParameterStore zeros_like() const {
    ParameterStore out;
    for (const auto& [name, t] : tensors_) out.add(name, Tensor<Real>(t.shape()));
    return out;
  }

  ParameterStore& operator+=(const ParameterStore& other) {
    for (auto& [name, t] : tensors_) t += other.get(name);
    return *this;
  }

  ParameterStore& operator*=(Real s) {
    for (auto& [_, t] : tensors_) t *= s;
    return *this;
  }

  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

 private:
  Map tensors_;
};

/// Gradients share the parameter layout.
template <typename Real>
using Gradients = ParameterStore<Real>;

}  // namespace mdrec
