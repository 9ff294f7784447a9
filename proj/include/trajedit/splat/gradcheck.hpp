// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "trajedit/core/rng.hpp"
#include "trajedit/splat/render.hpp"

// Random scenes and a central-difference checker for render_backward.

namespace trajedit::splat {

struct Scene {
  GaussianCloud cloud;
  Camera camera;
  Vec3<double> background{};
};

/// Unconstrained random scene seen by an orbit camera at res x res.
inline Scene random_scene(Rng& rng, int primitives, int res) {
  Scene s;
  s.camera = orbit_camera("rand", rng.uniform(-180.0, 180.0), 3.0, 2.0, res, res);
  s.background = {rng.uniform(), rng.uniform(), rng.uniform()};
  for (int i = 0; i < primitives; ++i) {
    GaussianParams<double> g;
    g.position = {rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7)};
    g.log_scale = std::log(rng.uniform(0.08, 0.35));
    g.color = {rng.uniform(), rng.uniform(), rng.uniform()};
    g.logit_opacity = logit(rng.uniform(0.05, 0.99));
    s.cloud.primitives.push_back(g);
  }
  return s;
}

namespace detail {

/// True when no pixel center sits within `margin` pixels of the 4-sigma
/// footprint boundary of primitive `i`.
inline bool footprint_clear(const Scene& s, std::size_t i, double margin) {
  const auto p = project_one(s.cloud.primitives[i], s.camera);
  const double edge = kCutoffSigmas * p.radius;
  for (int y = 0; y < s.camera.height; ++y) {
    for (int x = 0; x < s.camera.width; ++x) {
      const double d = std::hypot(x + 0.5 - p.u, y + 0.5 - p.v);
      if (std::abs(d - edge) < margin) return false;
    }
  }
  return true;
}

}  // namespace detail

/// Random scene in general position for finite differencing: opacities stay
/// below the alpha clamp, depths are separated by more than 1e-2, and every
/// footprint boundary keeps `margin` pixels away from all pixel centers, so
/// no +-h stencil crosses a discontinuity of the renderer.
inline Scene fd_safe_scene(Rng& rng, int primitives, int res, double margin = 0.02) {
  for (;;) {
    Scene s = random_scene(rng, primitives, res);
    for (auto& g : s.cloud.primitives) g.logit_opacity = logit(rng.uniform(0.1, 0.9));
    bool ok = true;
    const auto proj = project(s.cloud, s.camera);
    for (std::size_t i = 0; i < proj.size() && ok; ++i)
      for (std::size_t j = i + 1; j < proj.size() && ok; ++j) ok = std::abs(proj[i].depth - proj[j].depth) > 1e-2;
    if (!ok) continue;
    for (std::size_t i = 0; i < s.cloud.size(); ++i) {
      int tries = 0;
      while (!detail::footprint_clear(s, i, margin) && tries++ < 100) {
        s.cloud.primitives[i].log_scale = std::log(rng.uniform(0.08, 0.35));
      }
      if (tries > 100) ok = false;
    }
    if (ok) return s;
  }
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  int checked = 0;
  std::string worst;
};

/// Relative error with an absolute floor so that gradients that are zero in
/// exact arithmetic compare on an absolute scale.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Compares render_backward against central differences of
/// f(theta) = sum(G * render(theta)) for a random weight image G.
inline GradCheckReport gradient_check(const Scene& s, Rng& rng, double h = 1e-5) {
  const Shape3 shape{3, s.camera.height, s.camera.width};
  const Latent weights = rng.normal_like(shape);
  auto objective = [&](const GaussianCloud& c) {
    const auto img = render(c, s.camera, s.background);
    double f = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) f += weights[i] * img[i];
    return f;
  };
  const auto analytic = render_backward(s.cloud, s.camera, s.background, weights);
  GradCheckReport rep;
  for (std::size_t i = 0; i < s.cloud.size(); ++i) {
    for (int k = 0; k < kParamsPerPrimitive; ++k) {
      GaussianCloud plus = s.cloud, minus = s.cloud;
      param(plus.primitives[i], k) += h;
      param(minus.primitives[i], k) -= h;
      const double fd = (objective(plus) - objective(minus)) / (2.0 * h);
      const double an = param(analytic.primitives[i], k);
      const double rel = relative_error(an, fd);
      rep.max_abs_error = std::max(rep.max_abs_error, std::abs(an - fd));
      ++rep.checked;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst = "primitive " + std::to_string(i) + " " + param_name(k) + ": analytic " + std::to_string(an) +
                    " fd " + std::to_string(fd);
      }
    }
  }
  return rep;
}

}  // namespace trajedit::splat
