// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <concepts>
#include <string>
#include <vector>

#include "trajedit/core/errors.hpp"

namespace trajedit::splat {

template <class Real>
using Vec3 = std::array<Real, 3>;

/// Parameters of one isotropic Gaussian. The same layout carries gradients.
template <std::floating_point Real>
struct GaussianParams {
  Vec3<Real> position{};
  Real log_scale = 0;
  Vec3<Real> color{};
  Real logit_opacity = 0;

  Real scale() const { return std::exp(log_scale); }
  Real opacity() const { return Real(1) / (Real(1) + std::exp(-logit_opacity)); }

  friend bool operator==(const GaussianParams&, const GaussianParams&) = default;
};

inline constexpr int kParamsPerPrimitive = 8;

/// Flat view of the 8 parameters: position xyz, log_scale, color rgb, logit_opacity.
template <class Real>
Real& param(GaussianParams<Real>& g, int k) {
  switch (k) {
    case 0: return g.position[0];
    case 1: return g.position[1];
    case 2: return g.position[2];
    case 3: return g.log_scale;
    case 4: return g.color[0];
    case 5: return g.color[1];
    case 6: return g.color[2];
    default: return g.logit_opacity;
  }
}

template <class Real>
Real param(const GaussianParams<Real>& g, int k) {
  return param(const_cast<GaussianParams<Real>&>(g), k);
}

inline const char* param_name(int k) {
  static constexpr const char* names[kParamsPerPrimitive] = {"position.x", "position.y", "position.z", "log_scale",
                                                             "color.r",    "color.g",    "color.b",    "logit_opacity"};
  return names[k];
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

template <std::floating_point Real>
struct BasicGaussianCloud {
  std::vector<GaussianParams<Real>> primitives;

  std::size_t size() const noexcept { return primitives.size(); }
  bool empty() const noexcept { return primitives.empty(); }
  friend bool operator==(const BasicGaussianCloud&, const BasicGaussianCloud&) = default;

  void validate() const {
    for (std::size_t i = 0; i < primitives.size(); ++i) {
      for (int k = 0; k < kParamsPerPrimitive; ++k) {
        if (!std::isfinite(static_cast<double>(param(primitives[i], k)))) {
          throw DomainError("primitive " + std::to_string(i) + " has non-finite " + param_name(k));
        }
      }
    }
  }
};

/// Per-primitive partial derivatives; mirrors the cloud layout.
template <std::floating_point Real>
struct BasicCloudGradients {
  std::vector<GaussianParams<Real>> primitives;

  BasicCloudGradients() = default;
  explicit BasicCloudGradients(std::size_t n) : primitives(n) {}

  std::size_t size() const noexcept { return primitives.size(); }

  BasicCloudGradients& operator+=(const BasicCloudGradients& o) {
    if (o.size() != size()) throw ShapeError("gradient accumulation: primitive count mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
      for (int k = 0; k < kParamsPerPrimitive; ++k) param(primitives[i], k) += param(o.primitives[i], k);
    }
    return *this;
  }
};

using GaussianCloud = BasicGaussianCloud<double>;
using CloudGradients = BasicCloudGradients<double>;

template <class To, class From>
BasicGaussianCloud<To> cloud_cast(const BasicGaussianCloud<From>& in) {
  BasicGaussianCloud<To> out;
  out.primitives.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    for (int k = 0; k < kParamsPerPrimitive; ++k) param(out.primitives[i], k) = static_cast<To>(param(in.primitives[i], k));
  }
  return out;
}

/// Orthographic camera. World point x maps to camera frame p = R x + t; the
/// camera looks along +z of its frame, image x follows +p.x and image y
/// follows -p.y.
template <std::floating_point Real>
struct BasicCamera {
  std::string id;
  std::array<Real, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3<Real> translation{};
  Real ortho_extent = 1;
  int width = 1;
  int height = 1;

  Real pixels_per_unit() const { return static_cast<Real>(width) / ortho_extent; }

  /// World-space viewing direction R^T e_z.
  Vec3<Real> view_dir() const { return {rotation[6], rotation[7], rotation[8]}; }

  Vec3<Real> to_camera(const Vec3<Real>& x) const {
    Vec3<Real> p{};
    for (int r = 0; r < 3; ++r) {
      p[r] = rotation[3 * r] * x[0] + rotation[3 * r + 1] * x[1] + rotation[3 * r + 2] * x[2] + translation[r];
    }
    return p;
  }

  void validate(double tol = 1e-9) const {
    if (width < 1 || height < 1) throw DomainError("camera '" + id + "': resolution must be >= 1x1");
    if (!(ortho_extent > 0)) throw DomainError("camera '" + id + "': ortho extent must be positive");
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double dot = 0.0;
        for (int k = 0; k < 3; ++k) dot += double(rotation[3 * k + i]) * double(rotation[3 * k + j]);
        if (std::abs(dot - (i == j ? 1.0 : 0.0)) > tol) {
          throw DomainError("camera '" + id + "': rotation is not orthonormal");
        }
      }
    }
  }
};

using Camera = BasicCamera<double>;

template <class To, class From>
BasicCamera<To> camera_cast(const BasicCamera<From>& in) {
  BasicCamera<To> out;
  out.id = in.id;
  for (int i = 0; i < 9; ++i) out.rotation[i] = static_cast<To>(in.rotation[i]);
  for (int i = 0; i < 3; ++i) out.translation[i] = static_cast<To>(in.translation[i]);
  out.ortho_extent = static_cast<To>(in.ortho_extent);
  out.width = in.width;
  out.height = in.height;
  return out;
}

/// Rotation about the world y axis by `degrees`.
inline std::array<double, 9> rotation_y(double degrees) {
  const double r = degrees * 3.14159265358979323846 / 180.0;
  const double c = std::cos(r), s = std::sin(r);
  return {c, 0, s, 0, 1, 0, -s, 0, c};
}

/// Row-major 3x3 product a * b.
inline std::array<double, 9> matmul3(const std::array<double, 9>& a, const std::array<double, 9>& b) {
  std::array<double, 9> c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[3 * i + j] += a[3 * i + k] * b[3 * k + j];
  return c;
}

inline std::array<double, 9> transpose3(const std::array<double, 9>& a) {
  return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

/// Camera orbiting the origin about the y axis: world-to-camera rotation
/// rotation_y(degrees), origin placed `distance` in front of the camera.
inline Camera orbit_camera(std::string id, double degrees, double distance, double extent, int width, int height) {
  Camera cam;
  cam.id = std::move(id);
  cam.rotation = rotation_y(degrees);
  cam.translation = {0.0, 0.0, distance};
  cam.ortho_extent = extent;
  cam.width = width;
  cam.height = height;
  return cam;
}

}  // namespace trajedit::splat
