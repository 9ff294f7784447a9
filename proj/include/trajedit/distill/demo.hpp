// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trajedit/core/rng.hpp"
#include "trajedit/distill/pseudo_gt.hpp"

namespace trajedit::distill {

/// Where a helper score of the demo gets its mean: the current latent, the
/// initial latent, or nowhere (the context field stays empty).
enum class HelperSource { Current, Initial, None };

inline HelperSource parse_helper_source(std::string_view s) {
  if (s == "current" || s == "tracking") return HelperSource::Current;
  if (s == "initial" || s == "source") return HelperSource::Initial;
  if (s == "none") return HelperSource::None;
  throw Error("unknown helper source '" + std::string(s) + "' (current, initial, none)");
}

/// Annealed 2D reconstruction x <- x - lr (x - pseudo_gt) toward a point-mass
/// target. Helper distributions (VSD particles, empty and negative prompts)
/// are point masses; tracking the current latent makes their noise term equal
/// the injected eps, so every pseudo-GT has a closed form.
struct DistillDemoConfig {
  PseudoGtKind kind = PseudoGtKind::SDS;
  int steps = 200;
  int size = 8;
  double lr = 0.5;
  int t_hi = 45;
  int t_lo = 10;  // keeps the ISM inversion endpoint above 0
  double guidance = 1.5;
  std::uint64_t seed = 0;
  HelperSource auxiliary = HelperSource::Current;
  HelperSource reference = HelperSource::Initial;
  HelperSource empty = HelperSource::Current;
  HelperSource negative = HelperSource::Current;
};

struct DistillDemoResult {
  Latent initial;
  Latent target;
  Latent final;
  std::vector<int> timesteps;
  std::vector<double> distance;      // L2 to the target after each step
  std::vector<double> oracle_error;  // max |pseudo-GT - closed form| per step
  std::vector<Latent> snapshots;     // latent after each step
  double final_distance() const { return distance.empty() ? l2_distance(initial, target) : distance.back(); }
};

/// t_k falls linearly from t_hi to t_lo over the run (repeats allowed).
inline int demo_timestep(const DistillDemoConfig& c, int k) {
  if (c.steps == 1) return c.t_hi;
  const double f = static_cast<double>(k) / (c.steps - 1);
  return static_cast<int>(std::lround(c.t_hi + f * (c.t_lo - c.t_hi)));
}

/// Closed-form pseudo-GT with point-mass models tracking the current latent
/// (or, for DDS, a reference noised with the same eps).
inline Latent demo_oracle(const DistillDemoConfig& c, const Latent& x, const Latent& target) {
  if (c.kind == PseudoGtKind::NFSD) return axpby(1.0 - c.guidance, x, c.guidance, target);
  if (c.kind == PseudoGtKind::DDS && c.reference == HelperSource::Current) return x;
  return target;
}

inline DistillDemoResult run_distill_demo(const DistillDemoConfig& c, const diffusion::NoiseSchedule& sched) {
  if (c.steps < 1 || c.size < 1) throw DomainError("distill demo: steps and size must be >= 1");
  if (!(c.lr > 0.0 && c.lr <= 1.0)) throw DomainError("distill demo: lr must lie in (0, 1]");
  if (!(c.t_hi >= c.t_lo && c.t_lo >= 1 && c.t_hi <= sched.steps())) throw DomainError("distill demo: need T >= t_hi >= t_lo >= 1");

  Rng rng(derive_seed(c.seed, {0x64656d6fULL}));
  const Shape3 shape{3, c.size, c.size};
  DistillDemoResult r;
  r.initial = rng.uniform_like(shape, 0.0, 1.0);
  r.target = rng.uniform_like(shape, 0.0, 1.0);
  const Condition y{"target", {1}, std::nullopt};
  const Condition empty{"empty", {}, std::nullopt};
  const Condition negative{"negative", {9}, std::nullopt};
  const Condition source{"source", {2}, std::nullopt};

  Latent x = r.initial;
  for (int k = 0; k < c.steps; ++k) {
    const int t = demo_timestep(c, k);
    auto mean_of = [&](HelperSource h) { return h == HelperSource::Current ? x : r.initial; };
    diffusion::AnalyticGMMScore primary(sched, 0.0), particles(sched, 0.0);
    primary.set_components(y.id, {{r.target, 1.0}});
    if (c.empty != HelperSource::None) primary.set_components(empty.id, {{mean_of(c.empty), 1.0}});
    if (c.negative != HelperSource::None) primary.set_components(negative.id, {{mean_of(c.negative), 1.0}});
    if (c.reference == HelperSource::Initial) primary.set_components(source.id, {{r.initial, 1.0}});
    if (c.auxiliary != HelperSource::None) particles.set_components(y.id, {{mean_of(c.auxiliary), 1.0}});

    PseudoGtContext ctx;
    ctx.primary = &primary;
    if (c.auxiliary != HelperSource::None) ctx.auxiliary = &particles;
    if (c.reference != HelperSource::None) {
      // A reference that is the current latent under the same prompt makes
      // both DDS branches identical.
      ctx.reference = mean_of(c.reference);
      ctx.reference_condition = c.reference == HelperSource::Current ? y : source;
    }
    if (c.empty != HelperSource::None) ctx.empty_condition = empty;
    if (c.negative != HelperSource::None) ctx.negative_condition = negative;
    ctx.guidance_scale = c.guidance;

    const Latent eps = rng.normal_like(shape);
    const Latent pgt = pseudo_gt(c.kind, ctx, x, eps, t, y, sched);
    r.oracle_error.push_back(max_abs_diff(pgt, demo_oracle(c, x, r.target)));
    x = axpby(1.0 - c.lr, x, c.lr, pgt);
    r.timesteps.push_back(t);
    r.distance.push_back(l2_distance(x, r.target));
    r.snapshots.push_back(x);
  }
  r.final = x;
  return r;
}

}  // namespace trajedit::distill
