// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "trajedit/core/parallel.hpp"
#include "trajedit/core/tensor.hpp"
#include "trajedit/splat/cloud.hpp"

namespace trajedit::splat {

/// Footprint cutoff in units of the pixel-space standard deviation.
inline constexpr double kCutoffSigmas = 4.0;
/// Upper clamp on per-pixel alpha; keeps every transmittance factor >= 1e-3.
inline constexpr double kMaxAlpha = 0.999;

template <class Real>
using BasicRenderedImage = BasicLatent<Real>;
using RenderedImage = BasicRenderedImage<double>;

template <class Real>
struct Projection {
  Real u = 0;       // pixel x of the mean
  Real v = 0;       // pixel y of the mean
  Real depth = 0;   // camera-frame z
  Real radius = 0;  // pixel-space standard deviation
};

template <class Real>
Projection<Real> project_one(const GaussianParams<Real>& g, const BasicCamera<Real>& cam) {
  const auto p = cam.to_camera(g.position);
  const Real ppu = cam.pixels_per_unit();
  return Projection<Real>{static_cast<Real>(cam.width) / 2 + p[0] * ppu, static_cast<Real>(cam.height) / 2 - p[1] * ppu,
                          p[2], std::exp(g.log_scale) * ppu};
}

template <class Real>
std::vector<Projection<Real>> project(const BasicGaussianCloud<Real>& cloud, const BasicCamera<Real>& cam) {
  std::vector<Projection<Real>> out;
  out.reserve(cloud.size());
  for (const auto& g : cloud.primitives) out.push_back(project_one(g, cam));
  return out;
}

namespace detail {

/// Front-to-back order: ascending depth, ties by primitive index.
template <class Real>
std::vector<int> depth_order(const std::vector<Projection<Real>>& proj) {
  std::vector<int> order(proj.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return proj[a].depth < proj[b].depth; });
  return order;
}

template <class Real>
struct Fragment {
  int index;
  Real alpha;
  Real gauss;   // exp(-d2 / 2r^2)
  Real d2;
  bool clamped;
};

/// Active fragments at pixel center (px, py) in compositing order.
template <class Real>
void pixel_fragments(const BasicGaussianCloud<Real>& cloud, const std::vector<Projection<Real>>& proj,
                     const std::vector<int>& order, Real px, Real py, std::vector<Fragment<Real>>& out) {
  out.clear();
  const Real cutoff2 = static_cast<Real>(kCutoffSigmas * kCutoffSigmas);
  for (int i : order) {
    const auto& pr = proj[i];
    const Real dx = px - pr.u;
    const Real dy = py - pr.v;
    const Real d2 = dx * dx + dy * dy;
    const Real r2 = pr.radius * pr.radius;
    if (d2 > cutoff2 * r2) continue;
    const Real gauss = std::exp(-d2 / (2 * r2));
    const Real raw = cloud.primitives[i].opacity() * gauss;
    const bool clamped = raw > static_cast<Real>(kMaxAlpha);
    out.push_back(Fragment<Real>{i, clamped ? static_cast<Real>(kMaxAlpha) : raw, gauss, d2, clamped});
  }
}

}  // namespace detail

/// Front-to-back alpha compositing of the cloud seen by `cam`:
///   C(p) = sum_i c_i a_i(p) prod_{j<i} (1 - a_j(p)) + bg * prod_i (1 - a_i(p))
/// with a_i(p) = min(o_i exp(-|p - mu_i|^2 / 2 r_i^2), 0.999) inside the 4-sigma
/// footprint and zero outside. Pixel (x, y) is sampled at (x + 0.5, y + 0.5).
template <class Real>
BasicRenderedImage<Real> render(const BasicGaussianCloud<Real>& cloud, const BasicCamera<Real>& cam,
                                const Vec3<Real>& background, const ExecPolicy& policy = {}) {
  cam.validate(sizeof(Real) >= 8 ? 1e-9 : 1e-5);
  BasicRenderedImage<Real> img(Shape3{3, cam.height, cam.width});
  const auto proj = project(cloud, cam);
  const auto order = detail::depth_order(proj);
  parallel_for(cam.height, policy, [&](int y) {
    std::vector<detail::Fragment<Real>> frags;
    for (int x = 0; x < cam.width; ++x) {
      detail::pixel_fragments(cloud, proj, order, Real(x) + Real(0.5), Real(y) + Real(0.5), frags);
      Vec3<Real> acc{};
      Real trans = 1;
      for (const auto& f : frags) {
        const auto& c = cloud.primitives[f.index].color;
        for (int ch = 0; ch < 3; ++ch) acc[ch] += c[ch] * f.alpha * trans;
        trans *= (1 - f.alpha);
      }
      for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = acc[ch] + background[ch] * trans;
    }
  });
  return img;
}

/// Exact gradient of sum(grad_image * render(cloud, cam, background)) with
/// respect to every cloud parameter. The alpha clamp and footprint cutoff are
/// treated as in the forward pass (zero derivative where active). Per-row
/// partial sums are reduced in row order, so results do not depend on the
/// thread count.
template <class Real>
BasicCloudGradients<Real> render_backward(const BasicGaussianCloud<Real>& cloud, const BasicCamera<Real>& cam,
                                          const Vec3<Real>& background, const BasicLatent<Real>& grad_image,
                                          const ExecPolicy& policy = {}) {
  if (grad_image.shape() != Shape3{3, cam.height, cam.width}) {
    throw ShapeError("render_backward: grad_image shape " + to_string(grad_image.shape()) +
                     " does not match render output");
  }
  const std::size_t n = cloud.size();
  const auto proj = project(cloud, cam);
  const auto order = detail::depth_order(proj);

  // Per-row accumulators: d/du, d/dv, d/dr, d/dopacity, d/dcolor per primitive.
  struct Partial {
    Real du = 0, dv = 0, dr = 0, dop = 0;
    Vec3<Real> dc{};
  };
  std::vector<std::vector<Partial>> rows(static_cast<std::size_t>(cam.height), std::vector<Partial>(n));

  parallel_for(cam.height, policy, [&](int y) {
    std::vector<detail::Fragment<Real>> frags;
    std::vector<Real> trans_before;
    auto& acc = rows[static_cast<std::size_t>(y)];
    const Real py = Real(y) + Real(0.5);
    for (int x = 0; x < cam.width; ++x) {
      const Real px = Real(x) + Real(0.5);
      const Vec3<Real> g{grad_image.at(0, y, x), grad_image.at(1, y, x), grad_image.at(2, y, x)};
      if (g[0] == 0 && g[1] == 0 && g[2] == 0) continue;
      detail::pixel_fragments(cloud, proj, order, px, py, frags);
      trans_before.resize(frags.size());
      Real trans = 1;
      for (std::size_t k = 0; k < frags.size(); ++k) {
        trans_before[k] = trans;
        trans *= (1 - frags[k].alpha);
      }
      // behind = colour composited from fragments after k, plus background.
      Vec3<Real> behind = background;
      for (std::size_t kk = frags.size(); kk-- > 0;) {
        const auto& f = frags[kk];
        const auto& c = cloud.primitives[f.index].color;
        const Real t_k = trans_before[kk];
        Partial& p = acc[static_cast<std::size_t>(f.index)];
        Real dalpha = 0;
        for (int ch = 0; ch < 3; ++ch) {
          p.dc[ch] += g[ch] * f.alpha * t_k;
          dalpha += g[ch] * t_k * (c[ch] - behind[ch]);
        }
        for (int ch = 0; ch < 3; ++ch) behind[ch] = f.alpha * c[ch] + (1 - f.alpha) * behind[ch];
        if (f.clamped) continue;
        const auto& pr = proj[static_cast<std::size_t>(f.index)];
        const Real r2 = pr.radius * pr.radius;
        // alpha = op * exp(-d2 / 2r^2)
        const Real dalpha_dd2 = -f.alpha / (2 * r2);
        p.dop += dalpha * f.gauss;
        p.dr += dalpha * f.alpha * f.d2 / (r2 * pr.radius);
        p.du += dalpha * dalpha_dd2 * (-2 * (px - pr.u));
        p.dv += dalpha * dalpha_dd2 * (-2 * (py - pr.v));
      }
    }
  });

  BasicCloudGradients<Real> grads(n);
  const Real ppu = cam.pixels_per_unit();
  const auto& R = cam.rotation;
  for (std::size_t i = 0; i < n; ++i) {
    Partial total;
    for (const auto& row : rows) {
      const Partial& p = row[i];
      total.du += p.du;
      total.dv += p.dv;
      total.dr += p.dr;
      total.dop += p.dop;
      for (int ch = 0; ch < 3; ++ch) total.dc[ch] += p.dc[ch];
    }
    auto& gi = grads.primitives[i];
    for (int k = 0; k < 3; ++k) gi.position[k] = total.du * ppu * R[k] - total.dv * ppu * R[3 + k];
    gi.log_scale = total.dr * proj[i].radius;
    gi.color = total.dc;
    const Real op = cloud.primitives[i].opacity();
    gi.logit_opacity = total.dop * op * (1 - op);
  }
  return grads;
}

template <class Real>
struct DepthMap {
  BasicLatent<Real> depth;  // (1, H, W) alpha-weighted mean camera-frame depth
  BasicLatent<Real> alpha;  // (1, H, W) accumulated opacity 1 - prod(1 - a_i)
};

/// Expected depth and coverage per pixel, composited like render().
template <class Real>
DepthMap<Real> render_depth(const BasicGaussianCloud<Real>& cloud, const BasicCamera<Real>& cam,
                            const ExecPolicy& policy = {}) {
  DepthMap<Real> out{BasicLatent<Real>(Shape3{1, cam.height, cam.width}),
                     BasicLatent<Real>(Shape3{1, cam.height, cam.width})};
  const auto proj = project(cloud, cam);
  const auto order = detail::depth_order(proj);
  parallel_for(cam.height, policy, [&](int y) {
    std::vector<detail::Fragment<Real>> frags;
    for (int x = 0; x < cam.width; ++x) {
      detail::pixel_fragments(cloud, proj, order, Real(x) + Real(0.5), Real(y) + Real(0.5), frags);
      Real trans = 1, wsum = 0, dsum = 0;
      for (const auto& f : frags) {
        const Real w = f.alpha * trans;
        wsum += w;
        dsum += w * proj[static_cast<std::size_t>(f.index)].depth;
        trans *= (1 - f.alpha);
      }
      out.alpha.at(0, y, x) = 1 - trans;
      out.depth.at(0, y, x) = wsum > 0 ? dsum / wsum : Real(0);
    }
  });
  return out;
}

}  // namespace trajedit::splat
