// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "trajedit/core/rng.hpp"
#include "trajedit/splat/render.hpp"
#include "trajedit/tas/config.hpp"
#include "trajedit/tas/loss.hpp"
#include "trajedit/tas/scorer.hpp"
#include "trajedit/vcac/control.hpp"

namespace trajedit::tas {

using splat::Camera;
using splat::GaussianCloud;

struct EditSession {
  TasConfig config;
  GaussianCloud source;
  std::vector<Camera> cameras;
  std::vector<Latent> z_src0;  // renders of `source`, one per camera (see prepare)
  Condition y_src;
  Condition y_tgt;
  std::vector<std::optional<vcac::BlendMask>> masks;  // empty, or one entry per camera
  std::vector<Latent> reference;                      // optional target views, for metrics only
  std::shared_ptr<const EditScorer> scorer;
  ExecPolicy policy;

  Latent view_latent(const GaussianCloud& cloud, std::size_t m) const {
    return splat::latent_of_image(splat::render(cloud, cameras[m], config.background, policy), config.pool);
  }

  void prepare() {
    z_src0.clear();
    for (std::size_t m = 0; m < cameras.size(); ++m) z_src0.push_back(view_latent(source, m));
  }

  void validate() const {
    config.validate();
    source.validate();
    if (cameras.empty()) throw DomainError("session: no cameras");
    if (!scorer) throw MissingFieldError("session: no score model");
    if (z_src0.size() != cameras.size()) throw ShapeError("session: expected one source latent per camera");
    if (!masks.empty() && masks.size() != cameras.size()) throw ShapeError("session: expected one mask per camera");
    if (!reference.empty() && reference.size() != cameras.size()) {
      throw ShapeError("session: expected one reference view per camera");
    }
  }
};

struct MetricsRow {
  int n = 0;
  int t = 0;
  std::string camera;
  double l1 = 0.0;          // after the K inner steps
  double perceptual = 0.0;
  double anchor = 0.0;
  double total = 0.0;
  double total_first = 0.0;  // before the first inner step
  double pgt_dist_source = 0.0;  // RMS(pseudo-GT - z_src_0)
  double pgt_dist_target = std::numeric_limits<double>::quiet_NaN();  // RMS(pseudo-GT - reference)
  double pgt_step_l1 = 0.0;  // mean |pseudo-GT_n - pseudo-GT_{n-1}|; n = 1 compares to the first render
  int inner_increases = 0;   // batch-total increases over the K inner steps
};

/// Per-(n, camera) metrics. Wall time is kept apart from the rows so the CSV
/// is bitwise reproducible.
struct MetricsLog {
  std::vector<MetricsRow> rows;
  std::vector<double> step_seconds;

  static constexpr const char* kHeader =
      "n,t,camera,l1,perceptual,anchor,total,total_first,pgt_dist_source,pgt_dist_target,pgt_step_l1,"
      "inner_increases";

  std::string csv() const {
    std::ostringstream os;
    os << kHeader << '\n';
    char buf[64];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    };
    for (const auto& r : rows) {
      os << r.n << ',' << r.t << ',' << r.camera;
      num(r.l1);
      num(r.perceptual);
      num(r.anchor);
      num(r.total);
      num(r.total_first);
      num(r.pgt_dist_source);
      num(r.pgt_dist_target);
      num(r.pgt_step_l1);
      os << ',' << r.inner_increases << '\n';
    }
    return os.str();
  }

  void write_csv(const std::filesystem::path& path) const { write_text(path, csv()); }

  void write_timings(const std::filesystem::path& path) const {
    std::ostringstream os;
    os << "n,seconds\n";
    for (std::size_t i = 0; i < step_seconds.size(); ++i) os << i + 1 << ',' << step_seconds[i] << '\n';
    write_text(path, os.str());
  }

  int total_inner_increases() const {
    int s = 0;
    for (const auto& r : rows) s += r.inner_increases;
    return s;
  }

 private:
  static void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f << text;
  }
};

inline double rms_diff(const Latent& a, const Latent& b) {
  return l2_distance(a, b) / std::sqrt(static_cast<double>(a.size()));
}

/// Pseudo-GTs of every camera at timestep t for rendered latents z_pi. One
/// noise draw per camera, in camera order, feeds both branches. The update is
/// evaluated as z_pi + gamma_t (eps_src - eps_tgt), the same quantity as
/// (z_tgt - std (eps_tgt - eps_src + eps)) / scale but without the round trip
/// through z_tgt, so identical branches return z_pi bit for bit.
inline std::vector<Latent> form_pseudo_gts(const EditSession& s, const std::vector<Latent>& z_pi, int t, int n,
                                           Rng& rng) {
  const auto sched = s.config.schedule();
  sched.require_timestep(t, 1, "form_pseudo_gts");
  const double a = sched.scale(t), sd = sched.noise_std(t), gamma = sched.gamma(t);
  const std::size_t cams = s.cameras.size();
  if (z_pi.size() != cams) throw ShapeError("form_pseudo_gts: expected one rendered latent per camera");

  std::vector<Latent> z_tgt, z_src;
  for (std::size_t m = 0; m < cams; ++m) {
    require_same_shape(z_pi[m], s.z_src0[m], "form_pseudo_gts");
    const Latent eps = rng.normal_like(z_pi[m].shape());
    z_tgt.push_back(axpby(a, z_pi[m], sd, eps));
    z_src.push_back(axpby(a, s.z_src0[m], sd, eps));
  }
  BranchEps b;
  try {
    b = s.scorer->branch_eps(z_src, z_tgt, t, n, s.y_src, s.y_tgt);
  } catch (const Error& e) {
    throw Error("editing step " + std::to_string(n) + " (t=" + std::to_string(t) + "): " + e.what());
  }
  if (b.src.size() != cams || b.tgt.size() != cams) throw ShapeError("form_pseudo_gts: score model returned wrong view count");

  std::vector<Latent> out;
  for (std::size_t m = 0; m < cams; ++m) {
    Latent z0(z_pi[m].shape());
    for (std::size_t i = 0; i < z0.size(); ++i) z0[i] = z_pi[m][i] + gamma * (b.src[m][i] - b.tgt[m][i]);
    if (!z0.all_finite()) {
      throw DomainError("editing step " + std::to_string(n) + ": non-finite pseudo-GT for camera '" +
                        s.cameras[m].id + "'");
    }
    if (!s.masks.empty() && s.masks[m]) z0 = vcac::local_blend(z0, s.z_src0[m], *s.masks[m]);
    out.push_back(std::move(z0));
  }
  return out;
}

struct ReconStats {
  std::vector<LossTerms> first;  // per camera, before any update
  std::vector<LossTerms> last;   // per camera, after the final update
  int increases = 0;
};

/// K gradient steps on the mean-over-cameras loss against fixed targets. The
/// anchor is the cloud on entry.
inline GaussianCloud reconstruct(const EditSession& s, const GaussianCloud& start, const std::vector<Latent>& targets,
                                 ReconStats* stats = nullptr) {
  const auto& cfg = s.config;
  const std::size_t cams = s.cameras.size();
  const double inv_cams = 1.0 / static_cast<double>(cams);
  const GaussianCloud anchor = start;
  GaussianCloud cloud = start;
  double prev_total = 0.0;
  int increases = 0;
  std::vector<LossTerms> losses(cams);

  for (int k = 0; k <= cfg.inner_steps; ++k) {
    double total = 0.0;
    for (std::size_t m = 0; m < cams; ++m) {
      losses[m] = compute_loss(s.view_latent(cloud, m), targets[m], cloud, anchor, cfg.lambda_lpips, cfg.lambda_anchor);
      total += losses[m].total * inv_cams;
    }
    if (k == 0 && stats) stats->first = losses;
    if (k > 0 && total > prev_total) ++increases;
    prev_total = total;
    if (k == cfg.inner_steps || cfg.eta == 0.0) break;

    splat::CloudGradients grad = losses[0].grad_anchor;  // identical for every camera
    for (std::size_t m = 0; m < cams; ++m) {
      Latent g_img = splat::latent_of_image_backward(losses[m].grad_view, cfg.pool);
      for (auto& v : g_img.flat()) v *= inv_cams;
      grad += splat::render_backward(cloud, s.cameras[m], cfg.background, g_img, s.policy);
    }
    cloud = splat::apply_grad_step(cloud, grad, cfg.eta, cfg.rates);
  }
  if (stats) {
    stats->last = losses;
    stats->increases = increases;
  }
  return cloud;
}

struct OuterStepResult {
  GaussianCloud cloud;
  std::vector<Latent> rendered;    // z_pi before the update
  std::vector<Latent> pseudo_gts;  // per camera
  std::vector<MetricsRow> rows;
};

inline std::vector<MetricsRow> step_rows(const EditSession& s, int n, int t, const std::vector<Latent>& pgts,
                                         const std::vector<Latent>& prev, const ReconStats& st) {
  std::vector<MetricsRow> rows;
  for (std::size_t m = 0; m < s.cameras.size(); ++m) {
    MetricsRow r;
    r.n = n;
    r.t = t;
    r.camera = s.cameras[m].id;
    r.l1 = st.last[m].l1;
    r.perceptual = st.last[m].perceptual;
    r.anchor = st.last[m].anchor;
    r.total = st.last[m].total;
    r.total_first = st.first[m].total;
    r.pgt_dist_source = rms_diff(pgts[m], s.z_src0[m]);
    if (!s.reference.empty()) r.pgt_dist_target = rms_diff(pgts[m], s.reference[m]);
    r.pgt_step_l1 = mean_abs_diff(pgts[m], prev[m]);
    r.inner_increases = st.increases;
    rows.push_back(std::move(r));
  }
  return rows;
}

/// One outer iteration at editing step n (1-based): pseudo-GTs from the
/// current renders, then K inner updates. `prev_pgts` feeds the step distance
/// (defaults to the current renders).
inline OuterStepResult tas_outer_step(const EditSession& s, const GaussianCloud& cloud, int n, Rng& rng,
                                      const std::vector<Latent>* prev_pgts = nullptr) {
  const auto ann = s.config.annealing();
  if (n < 1 || n > static_cast<int>(ann.size())) {
    throw DomainError("tas_outer_step: n=" + std::to_string(n) + " outside [1, " + std::to_string(ann.size()) + "]");
  }
  const int t = ann[static_cast<std::size_t>(n - 1)];
  OuterStepResult out;
  for (std::size_t m = 0; m < s.cameras.size(); ++m) out.rendered.push_back(s.view_latent(cloud, m));
  out.pseudo_gts = form_pseudo_gts(s, out.rendered, t, n, rng);
  ReconStats st;
  out.cloud = reconstruct(s, cloud, out.pseudo_gts, &st);
  out.rows = step_rows(s, n, t, out.pseudo_gts, prev_pgts ? *prev_pgts : out.rendered, st);
  return out;
}

struct TasResult {
  GaussianCloud cloud;
  MetricsLog log;
  std::vector<std::vector<Latent>> trajectory;  // [n-1][camera] pseudo-GT (or 2D edit for no-tas)
  std::vector<std::vector<Latent>> renders;     // [n-1][camera] latent the step started from
  std::vector<Latent> initial_views;
  std::vector<Latent> final_views;
  std::uint64_t noise_draws = 0;
};

inline std::uint64_t editing_stream_seed(std::uint64_t seed) { return derive_seed(seed, {0x7461735f65646974ULL}); }

namespace detail {

template <class Body>
void run_logged(MetricsLog& log, const std::optional<std::filesystem::path>& partial_log, Body&& body) {
  try {
    body();
  } catch (...) {
    if (partial_log) {
      try {
        log.write_csv(*partial_log);
      } catch (...) {
      }
    }
    throw;
  }
}

inline std::vector<Latent> render_all(const EditSession& s, const GaussianCloud& cloud) {
  std::vector<Latent> v;
  for (std::size_t m = 0; m < s.cameras.size(); ++m) v.push_back(s.view_latent(cloud, m));
  return v;
}

}  // namespace detail

/// Full editing loop over the annealed timesteps, starting from the source
/// cloud. On failure the rows gathered so far go to `partial_log`.
inline TasResult run_tas(const EditSession& s, const std::optional<std::filesystem::path>& partial_log = std::nullopt) {
  s.validate();
  TasResult res;
  Rng rng(editing_stream_seed(s.config.seed));
  const int steps = s.config.num_outer_steps();
  res.cloud = s.source;
  res.initial_views = detail::render_all(s, res.cloud);
  detail::run_logged(res.log, partial_log, [&] {
    for (int n = 1; n <= steps; ++n) {
      const auto t0 = std::chrono::steady_clock::now();
      auto step = tas_outer_step(s, res.cloud, n, rng, res.trajectory.empty() ? nullptr : &res.trajectory.back());
      res.cloud = std::move(step.cloud);
      res.log.rows.insert(res.log.rows.end(), step.rows.begin(), step.rows.end());
      res.trajectory.push_back(std::move(step.pseudo_gts));
      res.renders.push_back(std::move(step.rendered));
      res.log.step_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
  });
  res.final_views = detail::render_all(s, res.cloud);
  res.noise_draws = rng.latent_draws();
  return res;
}

/// Ablation without 3D feedback: each view follows its own 2D editing
/// trajectory (the pseudo-GT of step n becomes the latent of step n + 1),
/// and the cloud is only fitted afterwards, N rounds of K steps against the
/// final 2D edits.
inline TasResult run_no_tas(const EditSession& s,
                            const std::optional<std::filesystem::path>& partial_log = std::nullopt) {
  s.validate();
  TasResult res;
  Rng rng(editing_stream_seed(s.config.seed));
  const auto ann = s.config.annealing();
  const int steps = static_cast<int>(ann.size());
  res.cloud = s.source;
  res.initial_views = detail::render_all(s, res.cloud);
  detail::run_logged(res.log, partial_log, [&] {
    std::vector<Latent> z = res.initial_views;
    for (int n = 1; n <= steps; ++n) {
      res.renders.push_back(z);
      res.trajectory.push_back(form_pseudo_gts(s, z, ann[static_cast<std::size_t>(n - 1)], n, rng));
      z = res.trajectory.back();
    }
    for (int n = 1; n <= steps; ++n) {
      const auto t0 = std::chrono::steady_clock::now();
      ReconStats st;
      res.cloud = reconstruct(s, res.cloud, z, &st);
      const auto& prev = n == 1 ? res.initial_views : res.trajectory[static_cast<std::size_t>(n - 2)];
      auto rows = step_rows(s, n, ann[static_cast<std::size_t>(n - 1)], res.trajectory[static_cast<std::size_t>(n - 1)],
                            prev, st);
      res.log.rows.insert(res.log.rows.end(), rows.begin(), rows.end());
      res.log.step_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
  });
  res.final_views = detail::render_all(s, res.cloud);
  res.noise_draws = rng.latent_draws();
  return res;
}

/// Per-step L1 distances d_n between consecutive pseudo-GTs of one camera;
/// d_1 compares against the initial render.
inline std::vector<double> trajectory_distances(const TasResult& r, std::size_t camera) {
  std::vector<double> d;
  for (std::size_t n = 0; n < r.trajectory.size(); ++n) {
    const Latent& prev = n == 0 ? r.initial_views[camera] : r.trajectory[n - 1][camera];
    d.push_back(mean_abs_diff(r.trajectory[n][camera], prev));
  }
  return d;
}

}  // namespace trajedit::tas
