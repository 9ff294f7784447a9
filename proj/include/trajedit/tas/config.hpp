// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trajedit/diffusion/schedule.hpp"
#include "trajedit/distill/weighting.hpp"
#include "trajedit/splat/cloud.hpp"
#include "trajedit/splat/optimizer.hpp"
#include "trajedit/vcac/tiny_denoiser.hpp"

namespace trajedit::tas {

enum class ScoreKind { Analytic, TinyDenoiser };

inline ScoreKind parse_score_kind(std::string_view s) {
  if (s == "analytic") return ScoreKind::Analytic;
  if (s == "tiny" || s == "tiny-denoiser") return ScoreKind::TinyDenoiser;
  throw Error("unknown score model '" + std::string(s) + "'");
}

inline const char* to_string(ScoreKind k) { return k == ScoreKind::Analytic ? "analytic" : "tiny-denoiser"; }

/// Inputs of the trajectory-anchored editing loop. None of the numeric
/// defaults come from a published setting; they are starting points.
struct TasConfig {
  // Noise schedule.
  diffusion::ScheduleKind schedule_kind = diffusion::ScheduleKind::LinearAlphaBar;
  int schedule_steps = 50;
  double schedule_floor = 0.01;

  // Annealed timesteps t_1 > ... > t_N; `timesteps` overrides the curve.
  int outer_steps = 24;
  int t_hi = 48;
  int t_lo = 1;
  distill::AnnealingCurve curve = distill::AnnealingCurve::Linear;
  std::vector<int> timesteps;

  // Reconstruction.
  int inner_steps = 15;
  double eta = 0.05;
  double lambda_lpips = 0.1;
  double lambda_anchor = 0.5;
  splat::GroupRates rates;
  int pool = 1;
  splat::Vec3<double> background{0.0, 0.0, 0.0};

  // Attention control (tiny-denoiser score only). t_q counts editing steps.
  std::optional<int> t_q;
  int ctx_len = 4;
  double angle_threshold_deg = 25.0;
  bool vcac = true;
  vcac::KvMode kv = vcac::KvMode::Auto;

  ScoreKind score = ScoreKind::Analytic;
  std::uint64_t seed = 0;

  diffusion::NoiseSchedule schedule() const {
    return diffusion::build_schedule(schedule_kind, schedule_steps, schedule_floor);
  }

  distill::AnnealingSchedule annealing() const {
    if (!timesteps.empty()) {
      for (std::size_t i = 0; i < timesteps.size(); ++i) {
        if (timesteps[i] < 1 || timesteps[i] > schedule_steps || (i > 0 && timesteps[i] >= timesteps[i - 1])) {
          throw DomainError("timesteps must be strictly decreasing within [1, " + std::to_string(schedule_steps) + "]");
        }
      }
      return distill::AnnealingSchedule{timesteps, curve};
    }
    if (outer_steps == 1) {
      if (t_hi < 1 || t_hi > schedule_steps) throw DomainError("t_hi outside [1, T]");
      return distill::AnnealingSchedule{{t_hi}, curve};
    }
    return distill::build_annealing(outer_steps, t_hi, t_lo, curve, schedule_steps);
  }

  int num_outer_steps() const { return timesteps.empty() ? outer_steps : static_cast<int>(timesteps.size()); }

  /// Query injection is active for editing steps n <= t_q (default 0.6 N).
  int injection_step() const {
    return t_q.value_or(static_cast<int>(std::lround(0.6 * num_outer_steps())));
  }

  void validate() const {
    if (inner_steps < 1) throw DomainError("inner_steps (K) must be >= 1");
    if (eta < 0.0 || !std::isfinite(eta)) throw DomainError("eta must be finite and >= 0");
    if (lambda_lpips < 0.0 || lambda_anchor < 0.0) throw DomainError("loss weights must be >= 0");
    if (pool < 1) throw DomainError("pool must be >= 1");
    if (ctx_len < 1) throw DomainError("ctx_len must be >= 1");
    if (timesteps.empty() && outer_steps < 1) throw DomainError("outer_steps must be >= 1");
    schedule();
    annealing();
  }
};

}  // namespace trajedit::tas
