// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "trajedit/core/tensor.hpp"
#include "trajedit/splat/cloud.hpp"

namespace trajedit::splat {

/// Average pooling by `pool` in both spatial dimensions (pool = 1 is the identity).
template <class Real>
BasicLatent<Real> latent_of_image(const BasicLatent<Real>& img, int pool) {
  if (pool < 1 || img.height() % pool != 0 || img.width() % pool != 0) {
    throw ShapeError("latent_of_image: pool " + std::to_string(pool) + " does not divide " +
                     std::to_string(img.height()) + "x" + std::to_string(img.width()));
  }
  if (pool == 1) return img;
  BasicLatent<Real> out(Shape3{img.channels(), img.height() / pool, img.width() / pool});
  const Real inv = Real(1) / static_cast<Real>(pool * pool);
  for (int c = 0; c < out.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        Real s = 0;
        for (int dy = 0; dy < pool; ++dy)
          for (int dx = 0; dx < pool; ++dx) s += img.at(c, y * pool + dy, x * pool + dx);
        out.at(c, y, x) = s * inv;
      }
  return out;
}

/// Adjoint of latent_of_image: spreads each pooled gradient uniformly.
template <class Real>
BasicLatent<Real> latent_of_image_backward(const BasicLatent<Real>& grad_latent, int pool) {
  if (pool == 1) return grad_latent;
  BasicLatent<Real> out(Shape3{grad_latent.channels(), grad_latent.height() * pool, grad_latent.width() * pool});
  const Real inv = Real(1) / static_cast<Real>(pool * pool);
  for (int c = 0; c < out.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) out.at(c, y, x) = grad_latent.at(c, y / pool, x / pool) * inv;
  return out;
}

template <class Real>
Real l1_loss(const BasicLatent<Real>& a, const BasicLatent<Real>& b) {
  require_same_shape(a, b, "l1_loss");
  return mean_abs_diff(a, b);
}

/// d l1_loss / d a (subgradient 0 where a == b).
template <class Real>
BasicLatent<Real> l1_loss_grad(const BasicLatent<Real>& a, const BasicLatent<Real>& b) {
  require_same_shape(a, b, "l1_loss_grad");
  BasicLatent<Real> g(a.shape());
  const Real inv = Real(1) / static_cast<Real>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Real d = a[i] - b[i];
    g[i] = d > 0 ? inv : (d < 0 ? -inv : Real(0));
  }
  return g;
}

inline constexpr int kPyramidLevels = 3;

/// Number of 2x pyramid levels usable for this shape (stops at odd sizes).
inline int pyramid_levels(const Shape3& s) {
  int levels = 1;
  int h = s.height, w = s.width;
  while (levels < kPyramidLevels && h % 2 == 0 && w % 2 == 0 && h >= 2 && w >= 2) {
    h /= 2;
    w /= 2;
    ++levels;
  }
  return levels;
}

/// Perceptual proxy: sum over a 3-level 2x average-pool pyramid of the mean
/// absolute difference at each level.
template <class Real>
Real perceptual_loss(const BasicLatent<Real>& a, const BasicLatent<Real>& b) {
  require_same_shape(a, b, "perceptual_loss");
  const int levels = pyramid_levels(a.shape());
  Real total = 0;
  BasicLatent<Real> pa = a, pb = b;
  for (int l = 0; l < levels; ++l) {
    if (l > 0) {
      pa = latent_of_image(pa, 2);
      pb = latent_of_image(pb, 2);
    }
    total += mean_abs_diff(pa, pb);
  }
  return total;
}

template <class Real>
BasicLatent<Real> perceptual_loss_grad(const BasicLatent<Real>& a, const BasicLatent<Real>& b) {
  require_same_shape(a, b, "perceptual_loss_grad");
  const int levels = pyramid_levels(a.shape());
  BasicLatent<Real> grad(a.shape());
  BasicLatent<Real> pa = a, pb = b;
  for (int l = 0; l < levels; ++l) {
    if (l > 0) {
      pa = latent_of_image(pa, 2);
      pb = latent_of_image(pb, 2);
    }
    const auto g = latent_of_image_backward(l1_loss_grad(pa, pb), 1 << l);
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
  }
  return grad;
}

/// Mean squared deviation of every cloud parameter from the anchor cloud.
template <class Real>
Real anchor_loss(const BasicGaussianCloud<Real>& cloud, const BasicGaussianCloud<Real>& anchor) {
  if (cloud.size() != anchor.size()) throw ShapeError("anchor_loss: primitive count mismatch");
  if (cloud.empty()) return 0;
  Real s = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (int k = 0; k < kParamsPerPrimitive; ++k) {
      const Real d = param(cloud.primitives[i], k) - param(anchor.primitives[i], k);
      s += d * d;
    }
  return s / static_cast<Real>(cloud.size() * kParamsPerPrimitive);
}

template <class Real>
BasicCloudGradients<Real> anchor_loss_grad(const BasicGaussianCloud<Real>& cloud,
                                           const BasicGaussianCloud<Real>& anchor) {
  if (cloud.size() != anchor.size()) throw ShapeError("anchor_loss_grad: primitive count mismatch");
  BasicCloudGradients<Real> g(cloud.size());
  if (cloud.empty()) return g;
  const Real k2 = Real(2) / static_cast<Real>(cloud.size() * kParamsPerPrimitive);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (int k = 0; k < kParamsPerPrimitive; ++k)
      param(g.primitives[i], k) = k2 * (param(cloud.primitives[i], k) - param(anchor.primitives[i], k));
  return g;
}

}  // namespace trajedit::splat
