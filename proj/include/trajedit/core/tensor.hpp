// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "trajedit/core/errors.hpp"

namespace trajedit {

struct Shape3 {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

inline std::string to_string(const Shape3& s) {
  std::ostringstream os;
  os << "(" << s.channels << ", " << s.height << ", " << s.width << ")";
  return os.str();
}

/// Dense (channels, height, width) tensor. Samplers and distillation math
/// treat it as a flat vector; the renderer and pooling use the 3-D view.
template <std::floating_point Real>
class BasicLatent {
 public:
  using value_type = Real;

  BasicLatent() = default;
  explicit BasicLatent(Shape3 shape, Real fill = Real(0)) : shape_(shape), data_(shape.size(), fill) {
    if (shape.channels < 1 || shape.height < 1 || shape.width < 1) {
      throw ShapeError("latent dimensions must be positive, got " + to_string(shape));
    }
  }
  BasicLatent(Shape3 shape, std::vector<Real> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("latent data size " + std::to_string(data_.size()) + " does not match shape " +
                       to_string(shape_));
    }
  }

  const Shape3& shape() const noexcept { return shape_; }
  int channels() const noexcept { return shape_.channels; }
  int height() const noexcept { return shape_.height; }
  int width() const noexcept { return shape_.width; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<Real> flat() noexcept { return data_; }
  std::span<const Real> flat() const noexcept { return data_; }
  const std::vector<Real>& values() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  Real& at(int c, int y, int x) noexcept { return data_[index(c, y, x)]; }
  const Real& at(int c, int y, int x) const noexcept { return data_[index(c, y, x)]; }

  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * shape_.height + static_cast<std::size_t>(y)) * shape_.width +
           static_cast<std::size_t>(x);
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicLatent&, const BasicLatent&) = default;

 private:
  Shape3 shape_{};
  std::vector<Real> data_;
};

using Latent = BasicLatent<double>;

template <class Real>
void require_same_shape(const BasicLatent<Real>& a, const BasicLatent<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

/// out[i] = alpha * a[i] + beta * b[i]
template <class Real>
BasicLatent<Real> axpby(Real alpha, const BasicLatent<Real>& a, Real beta, const BasicLatent<Real>& b,
                        const char* op = "axpby") {
  require_same_shape(a, b, op);
  BasicLatent<Real> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = alpha * a[i] + beta * b[i];
  return out;
}

template <class Real>
BasicLatent<Real> operator+(const BasicLatent<Real>& a, const BasicLatent<Real>& b) {
  return axpby(Real(1), a, Real(1), b, "operator+");
}

template <class Real>
BasicLatent<Real> operator-(const BasicLatent<Real>& a, const BasicLatent<Real>& b) {
  return axpby(Real(1), a, Real(-1), b, "operator-");
}

template <class Real>
BasicLatent<Real> operator*(Real s, const BasicLatent<Real>& a) {
  BasicLatent<Real> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
  return out;
}

template <class Real>
Real max_abs_diff(const BasicLatent<Real>& a, const BasicLatent<Real>& b) {
  require_same_shape(a, b, "max_abs_diff");
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <class Real>
Real l2_norm(const BasicLatent<Real>& a) {
  Real s = 0;
  for (Real v : a.flat()) s += v * v;
  return std::sqrt(s);
}

template <class Real>
Real l2_distance(const BasicLatent<Real>& a, const BasicLatent<Real>& b) {
  require_same_shape(a, b, "l2_distance");
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

template <class Real>
Real mean_abs_diff(const BasicLatent<Real>& a, const BasicLatent<Real>& b) {
  require_same_shape(a, b, "mean_abs_diff");
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<Real>(a.size());
}

template <class To, class From>
BasicLatent<To> latent_cast(const BasicLatent<From>& in) {
  std::vector<To> v(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) v[i] = static_cast<To>(in[i]);
  return BasicLatent<To>(in.shape(), std::move(v));
}

}  // namespace trajedit
