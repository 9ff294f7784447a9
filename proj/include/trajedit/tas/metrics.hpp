// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "trajedit/splat/losses.hpp"
#include "trajedit/splat/render.hpp"

namespace trajedit::tas {

/// Peak signal-to-noise ratio for unit-range images; +inf when identical.
inline double psnr(const Latent& a, const Latent& b) {
  require_same_shape(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / static_cast<double>(a.size());
  return mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
}

/// Single-channel mask of pixels where `a` and `b` differ by more than
/// `threshold` in any channel.
inline Latent change_mask(const Latent& a, const Latent& b, double threshold) {
  require_same_shape(a, b, "change_mask");
  Latent m(Shape3{1, a.height(), a.width()});
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      double d = 0.0;
      for (int c = 0; c < a.channels(); ++c) d = std::max(d, std::abs(a.at(c, y, x) - b.at(c, y, x)));
      m.at(0, y, x) = d > threshold ? 1.0 : 0.0;
    }
  return m;
}

struct ReprojectionOptions {
  double min_coverage = 0.5;    // accumulated alpha needed to trust a depth
  double depth_tolerance = 0.1; // world units; larger gaps count as occluded
  int min_pixels = 8;           // pairs with fewer valid pixels are skipped
};

namespace detail {

inline double bilinear(const Latent& img, int c, double fx, double fy) {
  const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  auto at = [&](int x, int y) {
    x = std::clamp(x, 0, img.width() - 1);
    y = std::clamp(y, 0, img.height() - 1);
    return img.at(c, y, x);
  };
  return (1 - ay) * ((1 - ax) * at(x0, y0) + ax * at(x0 + 1, y0)) + ay * ((1 - ax) * at(x0, y0 + 1) + ax * at(x0 + 1, y0 + 1));
}

}  // namespace detail

/// Cross-view disagreement of edited views. Every masked pixel of view a is
/// lifted to 3D with the expected depth of `geometry`, projected into view b,
/// and compared (bilinear sample, mean abs over channels) when it is visible
/// there. Returns the largest mean over ordered pairs (a, b), 0 if no pair
/// has enough valid pixels. Views live at image resolution / pool.
inline double reprojection_disagreement(const std::vector<Latent>& views, const std::vector<Latent>& masks,
                                        const splat::GaussianCloud& geometry, const std::vector<splat::Camera>& cams,
                                        int pool = 1, const ReprojectionOptions& opt = {}) {
  if (views.size() != cams.size() || masks.size() != cams.size()) {
    throw ShapeError("reprojection_disagreement: expected one view and one mask per camera");
  }
  std::vector<splat::DepthMap<double>> depth;
  for (const auto& cam : cams) {
    auto d = splat::render_depth(geometry, cam);
    depth.push_back({splat::latent_of_image(d.depth, pool), splat::latent_of_image(d.alpha, pool)});
  }
  double worst = 0.0;
  for (std::size_t a = 0; a < cams.size(); ++a) {
    const auto& ca = cams[a];
    const double ppu_a = ca.pixels_per_unit() / pool;
    const int wa = views[a].width(), ha = views[a].height();
    for (std::size_t b = 0; b < cams.size(); ++b) {
      if (a == b) continue;
      const auto& cb = cams[b];
      const double ppu_b = cb.pixels_per_unit() / pool;
      const int wb = views[b].width(), hb = views[b].height();
      double sum = 0.0;
      int count = 0;
      for (int y = 0; y < ha; ++y)
        for (int x = 0; x < wa; ++x) {
          if (masks[a].at(0, y, x) < 0.5 || depth[a].alpha.at(0, y, x) < opt.min_coverage) continue;
          const splat::Vec3<double> pc{(x + 0.5 - wa / 2.0) / ppu_a, -(y + 0.5 - ha / 2.0) / ppu_a,
                                       depth[a].depth.at(0, y, x)};
          splat::Vec3<double> w{};  // R^T (p - t)
          for (int i = 0; i < 3; ++i)
            for (int r = 0; r < 3; ++r) w[i] += ca.rotation[3 * r + i] * (pc[r] - ca.translation[r]);
          const auto q = cb.to_camera(w);
          const double u = wb / 2.0 + q[0] * ppu_b, v = hb / 2.0 - q[1] * ppu_b;
          const int xb = static_cast<int>(std::floor(u)), yb = static_cast<int>(std::floor(v));
          if (xb < 0 || yb < 0 || xb >= wb || yb >= hb) continue;
          if (depth[b].alpha.at(0, yb, xb) < opt.min_coverage) continue;
          if (std::abs(depth[b].depth.at(0, yb, xb) - q[2]) > opt.depth_tolerance) continue;
          double diff = 0.0;
          for (int c = 0; c < views[a].channels(); ++c) {
            diff += std::abs(views[a].at(c, y, x) - detail::bilinear(views[b], c, u - 0.5, v - 0.5));
          }
          sum += diff / views[a].channels();
          ++count;
        }
      if (count >= opt.min_pixels) worst = std::max(worst, sum / count);
    }
  }
  return worst;
}

}  // namespace trajedit::tas
