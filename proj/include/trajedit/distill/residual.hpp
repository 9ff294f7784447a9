// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "trajedit/core/rng.hpp"
#include "trajedit/distill/pseudo_gt.hpp"
#include "trajedit/distill/weighting.hpp"

namespace trajedit::distill {

/// omega(t) * (eps_pred - eps): the latent-space factor of the SDS gradient.
inline Latent sds_residual_classic(const Latent& eps_pred, const Latent& eps, int t, const WeightSchedule& w,
                                   const NoiseSchedule& sched) {
  require_same_shape(eps_pred, eps, "sds_residual_classic");
  const double omega = w(sched, t);
  Latent out(eps.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = omega * (eps_pred[i] - eps[i]);
  return out;
}

/// omega(t) * scale(t)/std(t) * (z_pi - pseudo_gt): the same factor written
/// as a reconstruction residual toward the SDS pseudo-ground-truth.
inline Latent sds_residual_recon(const Latent& z_pi, const Latent& pseudo_gt_latent, int t, const WeightSchedule& w,
                                 const NoiseSchedule& sched) {
  require_same_shape(z_pi, pseudo_gt_latent, "sds_residual_recon");
  if (t < 1) throw DomainError("sds_residual_recon: std(t) is zero at t = 0");
  const double k = w(sched, t) * sched.scale(t) / sched.noise_std(t);
  Latent out(z_pi.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * (z_pi[i] - pseudo_gt_latent[i]);
  return out;
}

struct EquivalenceReport {
  int trials = 0;
  double max_abs_diff = 0.0;
  double tolerance = 1e-10;
  bool passed() const noexcept { return max_abs_diff <= tolerance; }
};

/// Random trials of classic vs reconstruction residual. Each trial draws a
/// two-component analytic score, z_pi, eps, t and a weighting kind.
inline EquivalenceReport assert_sds_equivalence(int trials, std::uint64_t seed,
                                                Shape3 shape = Shape3{3, 8, 8},
                                                const NoiseSchedule& sched = diffusion::default_schedule()) {
  if (trials < 1) throw DomainError("assert_sds_equivalence: trials must be >= 1");
  EquivalenceReport report;
  report.trials = trials;
  Rng rng(seed);
  const Condition y{"y", {1}, std::nullopt};
  for (int k = 0; k < trials; ++k) {
    diffusion::AnalyticGMMScore model(sched, rng.uniform(0.0, 1.0));
    const double w0 = rng.uniform(0.2, 0.8);
    model.set_components("y", {{rng.normal_like(shape), w0}, {rng.normal_like(shape), 1.0 - w0}});
    const Latent z_pi = rng.normal_like(shape);
    const Latent eps = rng.normal_like(shape);
    const int t = rng.uniform_int(1, sched.steps());
    const WeightSchedule w = (k % 2 == 0) ? WeightSchedule::std_squared() : WeightSchedule::constant(rng.uniform(0.5, 2.0));

    const Latent eps_pred = model.eps(diffusion::add_noise(sched, z_pi, eps, t), t, y);
    const Latent classic = sds_residual_classic(eps_pred, eps, t, w, sched);

    PseudoGtContext ctx;
    ctx.primary = &model;
    const Latent pgt = pseudo_gt(PseudoGtKind::SDS, ctx, z_pi, eps, t, y, sched);
    const Latent recon = sds_residual_recon(z_pi, pgt, t, w, sched);
    report.max_abs_diff = std::max(report.max_abs_diff, max_abs_diff(classic, recon));
  }
  return report;
}

}  // namespace trajedit::distill
