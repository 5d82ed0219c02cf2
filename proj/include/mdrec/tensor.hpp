#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdrec {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for a primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared where checked mode requires finite values.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major tensor. Rank 0 is not used: scalars have shape {1}.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real{0})
      : shape_(std::move(shape)), values_(checked_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<Real> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != checked_size(shape_)) {
      throw ShapeError("tensor: " + std::to_string(values_.size()) +
                       " values do not fill shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(Real v) { return Tensor({1}, std::vector<Real>{v}); }

  static Tensor vector(std::vector<Real> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor vector(std::initializer_list<Real> values) {
    return vector(std::vector<Real>(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<Real> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  Real* data() { return values_.data(); }
  const Real* data() const { return values_.data(); }
  std::span<Real> values() { return values_; }
  std::span<const Real> values() const { return values_; }
  std::vector<Real>& storage() { return values_; }
  const std::vector<Real>& storage() const { return values_; }

  Real& operator[](std::size_t i) { return values_[i]; }
  Real operator[](std::size_t i) const { return values_[i]; }

  Real& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  Real item() const {
    if (values_.size() != 1) {
      throw ShapeError("item: tensor of shape " + shape_string(shape_) +
                       " is not a scalar");
    }
    return values_[0];
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](Real v) { return std::isfinite(v); });
  }

  void fill(Real v) { std::fill(values_.begin(), values_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape("add", other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
  }

  Tensor& operator*=(Real s) {
    for (auto& v : values_) v *= s;
    return *this;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  void require_same_shape(const char* op, const Tensor& other) const {
    if (shape_ != other.shape_) {
      throw ShapeError(std::string(op) + ": shape mismatch " +
                       shape_string(shape_) + " vs " +
                       shape_string(other.shape_));
    }
  }

 private:
  static std::size_t checked_size(const Shape& shape) {
    for (std::size_t d : shape) {
      if (d == 0) {
        throw ShapeError("tensor: zero dimension in shape " + shape_string(shape));
      }
    }
    return shape.empty() ? 0 : shape_size(shape);
  }

  Shape shape_;
  std::vector<Real> values_;
};

template <typename Real>
Real dot(std::span<const Real> a, std::span<const Real> b) {
  Real acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <typename Real>
Real l2_norm(std::span<const Real> a) {
  return std::sqrt(dot(a, a));
}

}  // namespace mdrec
