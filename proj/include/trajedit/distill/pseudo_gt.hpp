// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "trajedit/core/tensor.hpp"
#include "trajedit/diffusion/sampler.hpp"
#include "trajedit/diffusion/score.hpp"

namespace trajedit::distill {

using diffusion::Condition;
using diffusion::NoiseSchedule;
using diffusion::ScoreModel;

enum class PseudoGtKind { SDS, VSD, DDS, ISM, NFSD };

inline PseudoGtKind parse_pseudo_gt_kind(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (s == "SDS" || s == "SJC") return PseudoGtKind::SDS;
  if (s == "VSD") return PseudoGtKind::VSD;
  if (s == "DDS") return PseudoGtKind::DDS;
  if (s == "ISM") return PseudoGtKind::ISM;
  if (s == "NFSD") return PseudoGtKind::NFSD;
  throw Error("unknown pseudo-ground-truth kind '" + std::string(name) + "'");
}

inline const char* to_string(PseudoGtKind k) {
  switch (k) {
    case PseudoGtKind::SDS: return "SDS";
    case PseudoGtKind::VSD: return "VSD";
    case PseudoGtKind::DDS: return "DDS";
    case PseudoGtKind::ISM: return "ISM";
    case PseudoGtKind::NFSD: return "NFSD";
  }
  return "?";
}

/// Classifier direction hook for NFSD: (z_t, t, y) -> delta_C.
using DeltaCHook = std::function<Latent(const Latent& z_t, int t, const Condition& y)>;

/// Everything the zoo rows may need beyond (z_pi, eps, t, y). Score models are
/// borrowed and must outlive the context.
struct PseudoGtContext {
  const ScoreModel* primary = nullptr;
  /// VSD: the particle-distribution model.
  const ScoreModel* auxiliary = nullptr;
  /// DDS: clean reference latent, noised with the same eps as the main branch,
  /// and its condition y'.
  std::optional<Latent> reference;
  std::optional<Condition> reference_condition;
  /// ISM / NFSD: the empty prompt.
  std::optional<Condition> empty_condition;
  /// ISM: s = max(t - ism_step, 0), reached by deterministic DDIM from z_t.
  int ism_step = 5;
  /// NFSD
  std::optional<Condition> negative_condition;
  double guidance_scale = 7.5;
  /// NFSD: replaces the default delta_C = eps(z_t, y) - eps(z_t, empty).
  DeltaCHook delta_c;
};

namespace detail {

inline const ScoreModel& need(const ScoreModel* m, PseudoGtKind kind, const char* field) {
  if (m == nullptr) throw MissingFieldError(std::string(to_string(kind)) + " pseudo-ground-truth needs '" + field + "'");
  return *m;
}

template <class T>
const T& need(const std::optional<T>& v, PseudoGtKind kind, const char* field) {
  if (!v) throw MissingFieldError(std::string(to_string(kind)) + " pseudo-ground-truth needs '" + field + "'");
  return *v;
}

}  // namespace detail

/// Deterministic DDIM (sigma = 0) from z_t down to z_s, one unit step at a
/// time, with the empty-prompt score. Returns (z_s, s).
inline std::pair<Latent, int> ism_inversion_latent(const NoiseSchedule& sched, const PseudoGtContext& ctx,
                                                   const Latent& z_t, int t) {
  const auto& model = detail::need(ctx.primary, PseudoGtKind::ISM, "primary");
  const auto& empty = detail::need(ctx.empty_condition, PseudoGtKind::ISM, "empty_condition");
  if (ctx.ism_step < 1) throw DomainError("ISM: inversion step must be >= 1");
  const int s = std::max(t - ctx.ism_step, 0);
  if (s >= t) throw DomainError("ISM: need s < t (s=" + std::to_string(s) + ", t=" + std::to_string(t) + ")");
  Latent z = z_t;
  const Latent zero(z_t.shape());
  for (int k = t; k > s; --k) z = diffusion::ddim_step(sched, z, model.eps(z, k, empty), k, 0.0, zero);
  return {std::move(z), s};
}

/// The bracketed difference Delta of a zoo row; pseudo_gt = z_pi + gamma_t * Delta.
inline Latent pseudo_gt_delta(PseudoGtKind kind, const PseudoGtContext& ctx, const Latent& z_pi, const Latent& eps,
                              int t, const Condition& y, const NoiseSchedule& sched) {
  sched.require_timestep(t, 1, "pseudo_gt");
  require_same_shape(z_pi, eps, "pseudo_gt");
  const ScoreModel& phi = detail::need(ctx.primary, kind, "primary");
  const Latent z_t = diffusion::add_noise(sched, z_pi, eps, t);
  switch (kind) {
    case PseudoGtKind::SDS:
      return eps - phi.eps(z_t, t, y);
    case PseudoGtKind::VSD: {
      const ScoreModel& aux = detail::need(ctx.auxiliary, kind, "auxiliary");
      return aux.eps(z_t, t, y) - phi.eps(z_t, t, y);
    }
    case PseudoGtKind::DDS: {
      const Latent& ref = detail::need(ctx.reference, kind, "reference");
      const Condition& y_ref = detail::need(ctx.reference_condition, kind, "reference_condition");
      const Latent z_ref_t = diffusion::add_noise(sched, ref, eps, t);
      return phi.eps(z_ref_t, t, y_ref) - phi.eps(z_t, t, y);
    }
    case PseudoGtKind::ISM: {
      const Condition& empty = detail::need(ctx.empty_condition, kind, "empty_condition");
      const auto [z_s, s] = ism_inversion_latent(sched, ctx, z_t, t);
      return phi.eps(z_s, s, empty) - phi.eps(z_t, t, y);
    }
    case PseudoGtKind::NFSD: {
      const Condition& empty = detail::need(ctx.empty_condition, kind, "empty_condition");
      const Condition& neg = detail::need(ctx.negative_condition, kind, "negative_condition");
      const Latent e_empty = phi.eps(z_t, t, empty);
      const Latent delta_c = ctx.delta_c ? ctx.delta_c(z_t, t, y) : phi.eps(z_t, t, y) - e_empty;
      require_same_shape(z_pi, delta_c, "NFSD delta_C");
      const Latent e_neg = phi.eps(z_t, t, neg);
      Latent d(z_pi.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = e_neg[i] - e_empty[i] - ctx.guidance_scale * delta_c[i];
      return d;
    }
  }
  throw Error("unreachable pseudo-ground-truth kind");
}

/// Pseudo-ground-truth z_pi + gamma_t * Delta(kind) with z_t = add_noise(z_pi, eps, t).
inline Latent pseudo_gt(PseudoGtKind kind, const PseudoGtContext& ctx, const Latent& z_pi, const Latent& eps, int t,
                        const Condition& y, const NoiseSchedule& sched) {
  const Latent delta = pseudo_gt_delta(kind, ctx, z_pi, eps, t, y, sched);
  const double g = sched.gamma(t);
  Latent out(z_pi.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z_pi[i] + g * delta[i];
  return out;
}

}  // namespace trajedit::distill
