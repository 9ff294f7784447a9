// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "trajedit/diffusion/sampler.hpp"
#include "trajedit/distill/residual.hpp"
#include "trajedit/splat/gradcheck.hpp"
#include "trajedit/tas/toy.hpp"
#include "trajedit/vcac/tiny_denoiser.hpp"

namespace trajedit::app {

using diffusion::Condition;


/// One property check: pass iff observed <= tolerance.
struct Check {
  std::string name;
  double observed = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  bool passed() const noexcept { return observed <= tolerance; }
};

struct SuiteReport {
  std::string suite;
  std::uint64_t seed = 0;
  std::vector<Check> checks;

  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed()) return false;
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"suite", suite}, {"seed", seed}, {"passed", passed()}, {"checks", nlohmann::json::array()}};
    for (const auto& c : checks) {
      j["checks"].push_back({{"name", c.name},
                             {"passed", c.passed()},
                             {"max_error", c.observed},
                             {"tolerance", c.tolerance},
                             {"seconds", c.seconds}});
    }
    return j;
  }
};

inline Check timed_check(std::string name, double tolerance, const std::function<double()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Check c{std::move(name), body(), tolerance, 0.0};
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"schedules", "samplers", "equivalence", "gradients", "vcac",
                                              "tas-identities"};
  return names;
}

// ---- individual checks, shared with the acceptance binary ---------------------

/// max |classic SDS residual - reconstruction residual| over random trials.
inline double check_sds_equivalence(int trials, std::uint64_t seed) {
  return distill::assert_sds_equivalence(trials, seed).max_abs_diff;
}

/// max |DDIM(sigma = std(t-1)) - DDCM| over random single steps.
inline double check_ddim_reduces_to_ddcm(int trials, std::uint64_t seed) {
  const auto sched = diffusion::default_schedule();
  Rng rng(seed);
  double worst = 0.0;
  for (int k = 0; k < trials; ++k) {
    const int t = rng.uniform_int(1, sched.steps());
    const Shape3 shape{3, 8, 8};
    const Latent z = rng.normal_like(shape), eps = rng.normal_like(shape), noise = rng.normal_like(shape);
    const Latent a = diffusion::ddim_step(sched, z, eps, t, sched.noise_std(t - 1), noise);
    const Latent b = diffusion::ddcm_step(sched, z, eps, t, noise);
    worst = std::max(worst, max_abs_diff(a, b));
  }
  return worst;
}

/// max difference between clean-latent predictions of a DDCM sampling run and
/// the x0-space recursion, over full trajectories with an analytic score.
inline double check_ddcm_x0_trajectories(int seeds, std::uint64_t seed) {
  const auto sched = diffusion::default_schedule();
  const int T = sched.steps();
  double worst = 0.0;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(s)}));
    const Shape3 shape{3, 8, 8};
    diffusion::AnalyticGMMScore model(sched, rng.uniform(0.1, 1.0));
    model.set_components("y", {{rng.normal_like(shape), 0.5}, {rng.normal_like(shape), 0.5}});
    const Condition y{"y", {1}, std::nullopt};
    Latent z = rng.normal_like(shape);
    Latent x0_rec;
    for (int t = T; t >= 1; --t) {
      const Latent eps_pred = model.eps(z, t, y);
      const Latent x0 = diffusion::predict_x0(sched, z, eps_pred, t);
      if (t == T) {
        x0_rec = x0;
      } else {
        // z was formed at step t+1 as scale(t) x0_hat(t+1) + std(t) eps_fresh.
        worst = std::max(worst, max_abs_diff(x0, x0_rec));
      }
      const Latent fresh = rng.normal_like(shape);
      const Latent z_next = diffusion::ddcm_step(sched, z, eps_pred, t, fresh);
      if (t - 1 >= 1) {
        const Latent eps_next = model.eps(z_next, t - 1, y);
        x0_rec = diffusion::ddcm_x0_step(sched, x0, fresh, eps_next, t - 1);
      }
      z = z_next;
    }
  }
  return worst;
}

/// Worst relative error of render_backward against central differences.
inline double check_render_gradients(int scenes, int primitives, int res, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < scenes; ++i) {
    const auto scene = splat::fd_safe_scene(rng, primitives, res);
    worst = std::max(worst, splat::gradient_check(scene, rng).max_rel_error);
  }
  return worst;
}

inline double check_schedule_invariants() {
  double worst = 0.0;
  for (auto kind : {diffusion::ScheduleKind::LinearAlphaBar, diffusion::ScheduleKind::Cosine}) {
    const auto s = diffusion::build_schedule(kind, 50, 0.01);
    worst = std::max(worst, std::abs(s.alpha_bar(0) - 1.0));
    for (int t = 1; t <= s.steps(); ++t) {
      if (!(s.alpha_bar(t) < s.alpha_bar(t - 1))) return INFINITY;
      worst = std::max(worst, std::abs(s.scale(t) * s.scale(t) + s.noise_std(t) * s.noise_std(t) - 1.0));
      worst = std::max(worst, std::abs(s.gamma(t) - s.noise_std(t) / s.scale(t)));
    }
  }
  const auto lin = diffusion::default_schedule();
  worst = std::max(worst, std::abs(lin.alpha_bar(lin.steps()) - 0.01));
  return worst;
}

namespace detail {

inline vcac::ContextPartition spread_partition(int n, int ctx, double spread_deg) {
  std::vector<vcac::Direction> dirs;
  for (int i = 0; i < n; ++i) {
    const double r = spread_deg * i * 3.14159265358979323846 / 180.0;
    dirs.push_back({std::sin(r), 0, std::cos(r)});
  }
  return vcac::partition_contexts(n, ctx, dirs, 25.0);
}

inline double matrix_diff(const vcac::Matrix& a, const vcac::Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace detail

/// Dual-branch identity: target branch with every hook fed by the source
/// branch's cache reproduces the source branch.
inline double check_hook_identity(std::uint64_t seed) {
  const vcac::TinyDenoiser model(vcac::TinyDenoiserConfig{3, 4, 16, 2, 7});
  Rng rng(seed);
  std::vector<Latent> f;
  for (int i = 0; i < 8; ++i) f.push_back(rng.normal_like(Shape3{3, 8, 8}));
  const Condition y{"y", {3, 5, 8}, std::nullopt};
  double worst = 0.0;
  for (auto mode : {vcac::KvMode::None, vcac::KvMode::Propagate, vcac::KvMode::Reference, vcac::KvMode::Auto}) {
    vcac::VcacHooks src;
    src.kv = mode;
    src.partition = detail::spread_partition(8, 4, 40);
    vcac::ActivationCache cache;
    const auto a = model.eps(f, 17, y, src, nullptr, &cache);
    vcac::VcacHooks tgt = src;
    tgt.query_injection = true;
    tgt.t_q = 20;
    tgt.cross_alignment = vcac::align_prompts(y.tokens, y.tokens);
    const auto b = model.eps(f, 17, y, tgt, &cache);
    for (std::size_t i = 0; i < f.size(); ++i) worst = std::max(worst, max_abs_diff(a[i], b[i]));
  }
  return worst;
}

inline double check_kv_permutation(std::uint64_t seed) {
  Rng rng(seed);
  auto rnd = [&](int r, int c) {
    vcac::Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  };
  vcac::TokenTensor Q, K, V;
  for (int i = 0; i < 5; ++i) {
    Q.frames.push_back(rnd(6, 8));
    K.frames.push_back(rnd(6, 8));
    V.frames.push_back(rnd(6, 5));
  }
  const auto base = vcac::kv_reference(Q, K, V);
  const std::vector<int> perm{3, 0, 4, 1, 2};
  vcac::TokenTensor Kp, Vp;
  for (int i : perm) {
    Kp.frames.push_back(K[i]);
    Vp.frames.push_back(V[i]);
  }
  const auto permuted = vcac::kv_reference(Q, Kp, Vp);
  double worst = 0.0;
  for (int f = 0; f < 5; ++f) worst = std::max(worst, detail::matrix_diff(base[f], permuted[f]));
  return worst;
}

/// Query injection is active exactly for clock <= t_q: at the boundary the
/// source queries are used, one step later the target's own.
inline double check_injection_boundary(std::uint64_t seed) {
  Rng rng(seed);
  auto rnd = [&](int r, int c) {
    vcac::Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  };
  const auto Qs = rnd(4, 4), Qt = rnd(4, 4), K = rnd(5, 4), V = rnd(5, 3);
  double worst = detail::matrix_diff(vcac::query_inject(Qs, Qt, K, V, 10, 10), vcac::attention(Qs, K, V));
  worst = std::max(worst, detail::matrix_diff(vcac::query_inject(Qs, Qt, K, V, 11, 10), vcac::attention(Qt, K, V)));

  const vcac::TinyDenoiser model(vcac::TinyDenoiserConfig{3, 4, 16, 2, 7});
  const Condition y{"y", {3, 5, 8}, std::nullopt};
  std::vector<Latent> src{rng.normal_like(Shape3{3, 8, 8}), rng.normal_like(Shape3{3, 8, 8})};
  std::vector<Latent> tgt{rng.normal_like(Shape3{3, 8, 8}), rng.normal_like(Shape3{3, 8, 8})};
  vcac::ActivationCache cache;
  model.eps(src, 10, y, {}, nullptr, &cache);
  vcac::VcacHooks h;
  h.query_injection = true;
  h.t_q = 5;
  h.clock = 6;
  const auto after = model.eps(tgt, 10, y, h, &cache);
  const auto plain = model.eps(tgt, 10, y);
  for (std::size_t i = 0; i < tgt.size(); ++i) worst = std::max(worst, max_abs_diff(after[i], plain[i]));
  h.clock = 5;
  const auto at = model.eps(tgt, 10, y, h, &cache);
  // At the boundary injection must change the output.
  double moved = 0.0;
  for (std::size_t i = 0; i < tgt.size(); ++i) moved = std::max(moved, max_abs_diff(at[i], plain[i]));
  if (!(moved > 0.0)) return INFINITY;
  return worst;
}

/// Local blend copies source pixels where M = 0 and target pixels where M = 1.
inline double check_mask_preservation(std::uint64_t seed) {
  Rng rng(seed);
  const Latent a = rng.normal_like(Shape3{3, 16, 16}), b = rng.normal_like(Shape3{3, 16, 16});
  Latent m(Shape3{1, 16, 16});
  for (auto& v : m.flat()) {
    const double u = rng.uniform();
    v = u < 0.3 ? 0.0 : (u < 0.6 ? 1.0 : rng.uniform());
  }
  const Latent out = vcac::local_blend(a, b, vcac::BlendMask(m));
  double worst = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        if (m.at(0, y, x) == 0.0) worst = std::max(worst, std::abs(out.at(c, y, x) - b.at(c, y, x)));
        if (m.at(0, y, x) == 1.0) worst = std::max(worst, std::abs(out.at(c, y, x) - a.at(c, y, x)));
      }
  return worst;
}

struct FixedPointResult {
  double pseudo_gt_error = 0.0;  // max |pseudo-GT - rendered latent| over all steps
  double final_view_l1 = 0.0;    // max per-pixel |final - initial|
};

/// Identical prompts on the toy edit: the pseudo-GT is the rendered latent at
/// every outer step and the views never move.
inline FixedPointResult check_identical_prompt_fixed_point(const tas::TasConfig& cfg, int resolution) {
  tas::ToyEditOptions o;
  o.resolution = resolution;
  const auto toy = tas::make_toy_edit(o, cfg.schedule());
  const auto r = tas::run_tas(tas::toy_session(toy, cfg, true));
  FixedPointResult out;
  for (std::size_t n = 0; n < r.trajectory.size(); ++n)
    for (std::size_t m = 0; m < toy.cameras.size(); ++m) {
      out.pseudo_gt_error = std::max(out.pseudo_gt_error, max_abs_diff(r.trajectory[n][m], r.renders[n][m]));
    }
  for (std::size_t m = 0; m < toy.cameras.size(); ++m) {
    out.final_view_l1 = std::max(out.final_view_l1, max_abs_diff(r.final_views[m], r.initial_views[m]));
  }
  return out;
}

/// Point-mass target: every pseudo-GT equals the reference view.
inline double check_point_mass_pseudo_gt(std::uint64_t seed) {
  tas::TasConfig cfg;
  tas::ToyEditOptions o;
  o.resolution = 32;
  o.target_variance = 0.0;
  const auto toy = tas::make_toy_edit(o, cfg.schedule());
  const auto s = tas::toy_session(toy, cfg);
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 1; t <= cfg.schedule_steps; t += 7) {
    const auto pgt = tas::form_pseudo_gts(s, s.z_src0, t, 1, rng);
    for (std::size_t m = 0; m < pgt.size(); ++m) worst = std::max(worst, max_abs_diff(pgt[m], toy.reference[m]));
  }
  return worst;
}

/// eta = 0 with N = K = 1 leaves every parameter unchanged.
inline double check_zero_step(std::uint64_t seed) {
  tas::TasConfig cfg;
  cfg.outer_steps = 1;
  cfg.inner_steps = 1;
  cfg.eta = 0.0;
  cfg.seed = seed;
  tas::ToyEditOptions o;
  o.resolution = 32;
  const auto toy = tas::make_toy_edit(o, cfg.schedule());
  const auto r = tas::run_tas(tas::toy_session(toy, cfg));
  double worst = 0.0;
  for (std::size_t i = 0; i < r.cloud.size(); ++i)
    for (int k = 0; k < splat::kParamsPerPrimitive; ++k) {
      worst = std::max(worst, std::abs(splat::param(r.cloud.primitives[i], k) - splat::param(toy.source.primitives[i], k)));
    }
  return worst;
}

// ---- suites -----------------------------------------------------------------

inline SuiteReport run_suite(std::string_view name, std::uint64_t seed) {
  SuiteReport r{std::string(name), seed, {}};
  if (name == "schedules") {
    r.checks.push_back(timed_check("schedule_invariants", 1e-12, check_schedule_invariants));
  } else if (name == "samplers") {
    r.checks.push_back(timed_check("ddim_reduces_to_ddcm", 1e-12, [&] { return check_ddim_reduces_to_ddcm(1000, seed); }));
    r.checks.push_back(timed_check("ddcm_x0_trajectories", 1e-10, [&] { return check_ddcm_x0_trajectories(100, seed); }));
  } else if (name == "equivalence") {
    r.checks.push_back(timed_check("sds_reconstruction_equivalence", 1e-10, [&] { return check_sds_equivalence(1000, seed); }));
  } else if (name == "gradients") {
    r.checks.push_back(timed_check("render_backward_vs_fd", 1e-4, [&] { return check_render_gradients(20, 5, 32, seed); }));
  } else if (name == "vcac") {
    r.checks.push_back(timed_check("hook_identity", 1e-12, [&] { return check_hook_identity(seed); }));
    r.checks.push_back(timed_check("kv_permutation_invariance", 1e-12, [&] { return check_kv_permutation(seed); }));
    r.checks.push_back(timed_check("injection_boundary", 0.0, [&] { return check_injection_boundary(seed); }));
    r.checks.push_back(timed_check("mask_preservation", 0.0, [&] { return check_mask_preservation(seed); }));
  } else if (name == "tas-identities") {
    tas::TasConfig cfg;
    cfg.seed = seed;
    cfg.outer_steps = 8;
    cfg.inner_steps = 3;
    cfg.eta = 0.5;
    FixedPointResult fp;
    r.checks.push_back(timed_check("identical_prompt_pseudo_gt", 1e-10, [&] {
      fp = check_identical_prompt_fixed_point(cfg, 32);
      return fp.pseudo_gt_error;
    }));
    r.checks.push_back(Check{"identical_prompt_final_views", fp.final_view_l1, 1e-6, 0.0});
    r.checks.push_back(timed_check("point_mass_pseudo_gt", 1e-10, [&] { return check_point_mass_pseudo_gt(seed); }));
    r.checks.push_back(timed_check("zero_step_size", 0.0, [&] { return check_zero_step(seed); }));
  } else {
    throw std::invalid_argument("unknown suite '" + std::string(name) + "'");
  }
  return r;
}

}  // namespace trajedit::app
