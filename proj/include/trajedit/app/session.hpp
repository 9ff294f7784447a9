// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "trajedit/io/config.hpp"
#include "trajedit/io/image.hpp"
#include "trajedit/io/scene.hpp"
#include "trajedit/tas/engine.hpp"
#include "trajedit/tas/metrics.hpp"
#include "trajedit/tas/toy.hpp"
#include "trajedit/vcac/partition.hpp"

namespace trajedit::app {

namespace fs = std::filesystem;
using diffusion::Condition;

// Session files (INI-like, or the same schema as JSON):
//
//   [scene]   source = <scene file>; cameras = <ids> (default: all in file)
//   [edit]    source_prompt / target_prompt = <token ids>; identical = bool
//             masks = <one PGM per camera> (optional)
//   [score]   model = analytic | tiny
//             analytic: target_scene = <scene> or target_images = <PPMs>,
//                       source_variance, target_variance
//             tiny: patch, dim, layers, weights_seed
//   [tas]     every TasConfig field
//   [metrics] edit_threshold
//
// Relative paths resolve against the directory of the session file.

struct LoadedSession {
  tas::EditSession session;
  io::SceneFile scene;  // source scene with the selected cameras
  double edit_threshold = 0.05;
  fs::path path;
  nlohmann::json snapshot;  // resolved configuration, for the manifest
};

inline nlohmann::json to_json(const tas::TasConfig& c) {
  nlohmann::json j{{"schedule", diffusion::to_string(c.schedule_kind)},
                   {"schedule_steps", c.schedule_steps},
                   {"schedule_floor", c.schedule_floor},
                   {"timesteps", c.annealing().timesteps},
                   {"curve", distill::to_string(c.curve)},
                   {"inner_steps", c.inner_steps},
                   {"eta", c.eta},
                   {"lambda_lpips", c.lambda_lpips},
                   {"lambda_anchor", c.lambda_anchor},
                   {"rate_position", c.rates.position},
                   {"rate_log_scale", c.rates.log_scale},
                   {"rate_color", c.rates.color},
                   {"rate_opacity", c.rates.opacity},
                   {"pool", c.pool},
                   {"background", c.background},
                   {"t_q", c.injection_step()},
                   {"ctx_len", c.ctx_len},
                   {"angle_threshold_deg", c.angle_threshold_deg},
                   {"vcac", c.vcac},
                   {"kv", vcac::to_string(c.kv)},
                   {"score", tas::to_string(c.score)},
                   {"seed", c.seed}};
  return j;
}

inline tas::TasConfig read_tas_config(const io::KeyValueConfig& kv) {
  tas::TasConfig c;
  if (auto v = kv.get("tas.schedule")) c.schedule_kind = diffusion::parse_schedule_kind(*v);
  c.schedule_steps = kv.get_int("tas.schedule_steps", c.schedule_steps);
  c.schedule_floor = kv.get_double("tas.schedule_floor", c.schedule_floor);
  c.outer_steps = kv.get_int("tas.outer_steps", c.outer_steps);
  c.t_hi = kv.get_int("tas.t_hi", c.t_hi);
  c.t_lo = kv.get_int("tas.t_lo", c.t_lo);
  if (auto v = kv.get("tas.curve")) c.curve = distill::parse_annealing_curve(*v);
  c.timesteps = kv.get_int_list("tas.timesteps");
  c.inner_steps = kv.get_int("tas.inner_steps", c.inner_steps);
  c.eta = kv.get_double("tas.eta", c.eta);
  c.lambda_lpips = kv.get_double("tas.lambda_lpips", c.lambda_lpips);
  c.lambda_anchor = kv.get_double("tas.lambda_anchor", c.lambda_anchor);
  c.rates.position = kv.get_double("tas.rate_position", c.rates.position);
  c.rates.log_scale = kv.get_double("tas.rate_log_scale", c.rates.log_scale);
  c.rates.color = kv.get_double("tas.rate_color", c.rates.color);
  c.rates.opacity = kv.get_double("tas.rate_opacity", c.rates.opacity);
  c.pool = kv.get_int("tas.pool", c.pool);
  c.t_q = kv.get_optional_int("tas.t_q");
  c.ctx_len = kv.get_int("tas.ctx_len", c.ctx_len);
  c.angle_threshold_deg = kv.get_double("tas.angle_threshold_deg", c.angle_threshold_deg);
  c.vcac = kv.get_bool("tas.vcac", c.vcac);
  if (auto v = kv.get("tas.kv")) c.kv = vcac::parse_kv_mode(*v);
  if (auto v = kv.get("tas.seed")) c.seed = std::stoull(*v);
  return c;
}

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

inline std::vector<int> tokens(const io::KeyValueConfig& kv, const std::string& key, std::vector<int> fallback) {
  auto t = kv.get_int_list(key);
  return t.empty() ? fallback : t;
}

/// Wraps any library error with the session path and the offending key.
template <class F>
auto with_context(const fs::path& path, const std::string& key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ParseError&) {
    throw;
  } catch (const IoError&) {
    throw;
  } catch (const MissingFieldError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(path.string(), 0, key + ": " + e.what());
  }
}

}  // namespace detail

/// Builds the score model for `ls.session` from the [score] section.
inline void attach_scorer(LoadedSession& ls, const io::KeyValueConfig& kv, const fs::path& base) {
  auto& s = ls.session;
  const std::string model = kv.get_string("score.model", "analytic");
  s.config.score = tas::parse_score_kind(model);

  // Target views: used as analytic means and, for either model, as metric reference.
  std::vector<Latent> target;
  if (auto ts = kv.get("score.target_scene")) {
    const auto edited = io::read_scene(detail::resolve(base, *ts));
    for (const auto& cam : s.cameras) {
      target.push_back(splat::latent_of_image(splat::render(edited.cloud, cam, s.config.background), s.config.pool));
    }
  } else if (kv.has("score.target_images")) {
    const auto files = kv.get_list("score.target_images");
    if (files.size() != s.cameras.size()) {
      throw ParseError(kv.source(), kv.line_of("score.target_images"), "target_images: expected one image per camera");
    }
    for (const auto& f : files) target.push_back(splat::latent_of_image(io::read_netpbm(detail::resolve(base, f)), s.config.pool));
  }
  s.reference = target;

  if (s.config.score == tas::ScoreKind::Analytic) {
    if (target.empty()) throw MissingFieldError(kv.source() + ": analytic score needs score.target_scene or score.target_images");
    const double src_var = kv.get_double("score.source_variance", 0.0);
    const double tgt_var = kv.get_double("score.target_variance", 0.1);
    auto gmm = std::make_shared<diffusion::AnalyticGMMScore>(s.config.schedule(), tgt_var);
    for (std::size_t m = 0; m < s.cameras.size(); ++m) {
      require_same_shape(target[m], s.z_src0[m], "session target view");
      gmm->set_components(tas::AnalyticEditScorer::view_key(s.y_src.id, s.cameras[m].id), {{s.z_src0[m], 1.0}}, src_var);
      if (s.y_tgt.id != s.y_src.id) {
        gmm->set_components(tas::AnalyticEditScorer::view_key(s.y_tgt.id, s.cameras[m].id), {{target[m], 1.0}}, tgt_var);
      }
    }
    s.scorer = std::make_shared<tas::AnalyticEditScorer>(gmm, tas::camera_ids(s.cameras));
    ls.snapshot["score"] = {{"model", "analytic"}, {"source_variance", src_var}, {"target_variance", tgt_var}};
  } else {
    vcac::TinyDenoiserConfig dc;
    dc.patch = kv.get_int("score.patch", dc.patch);
    dc.dim = kv.get_int("score.dim", dc.dim);
    dc.self_attn_layers = kv.get_int("score.layers", dc.self_attn_layers);
    dc.seed = static_cast<std::uint64_t>(kv.get_int("score.weights_seed", static_cast<int>(dc.seed)));
    auto model = std::make_shared<const vcac::TinyDenoiser>(dc);
    vcac::VcacHooks hooks;
    hooks.query_injection = true;
    hooks.t_q = s.config.injection_step();
    hooks.kv = s.config.kv;
    std::vector<vcac::Direction> dirs;
    for (const auto& c : s.cameras) dirs.push_back(c.view_dir());
    hooks.partition = vcac::partition_contexts(static_cast<int>(s.cameras.size()),
                                               std::min<int>(s.config.ctx_len, static_cast<int>(s.cameras.size())), dirs,
                                               s.config.angle_threshold_deg);
    s.scorer = std::make_shared<tas::TinyEditScorer>(model, hooks, s.config.vcac, s.policy);
    ls.snapshot["score"] = {{"model", "tiny"},
                            {"patch", dc.patch},
                            {"dim", dc.dim},
                            {"layers", dc.self_attn_layers},
                            {"weights_seed", dc.seed}};
  }
}

/// Rebuilds the scorer after a config change (ablations flip `vcac`).
inline void reload_scorer(LoadedSession& ls) {
  const auto kv = io::KeyValueConfig::load(ls.path);
  attach_scorer(ls, kv, ls.path.parent_path());
}

struct SessionOverrides {
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

inline LoadedSession load_session(const fs::path& path, const SessionOverrides& ov = {}) {
  const auto kv = io::KeyValueConfig::load(path);
  const fs::path base = path.parent_path();
  LoadedSession ls;
  ls.path = path;
  auto& s = ls.session;

  s.config = detail::with_context(path, "[tas]", [&] { return read_tas_config(kv); });
  if (ov.seed) s.config.seed = *ov.seed;
  if (auto bg = kv.get_list("tas.background"); !bg.empty()) {
    if (bg.size() != 3) throw ParseError(path.string(), kv.line_of("tas.background"), "background: expected 3 numbers");
    for (int k = 0; k < 3; ++k) s.config.background[k] = std::stod(bg[static_cast<std::size_t>(k)]);
  }
  detail::with_context(path, "[tas]", [&] {
    s.config.validate();
    return 0;
  });
  s.policy.threads = ov.threads;

  ls.scene = io::read_scene(detail::resolve(base, kv.require_string("scene.source")));
  if (!kv.has("tas.background")) s.config.background = ls.scene.background;
  const auto ids = kv.get_list("scene.cameras");
  if (ids.empty()) {
    s.cameras = ls.scene.cameras;
  } else {
    for (const auto& id : ids) {
      try {
        s.cameras.push_back(ls.scene.camera(id));
      } catch (const MissingFieldError& e) {
        throw ParseError(path.string(), kv.line_of("scene.cameras"), e.what());
      }
    }
  }
  if (s.cameras.empty()) throw ParseError(path.string(), 0, "session selects no cameras");
  ls.scene.cameras = s.cameras;
  s.source = ls.scene.cloud;

  s.y_src = Condition{"src", detail::tokens(kv, "edit.source_prompt", {1, 2, 3}), std::nullopt};
  s.y_tgt = Condition{"tgt", detail::tokens(kv, "edit.target_prompt", {1, 4, 3}), std::nullopt};
  if (kv.get_bool("edit.identical", false)) s.y_tgt = s.y_src;

  detail::with_context(path, "scene", [&] {
    s.prepare();
    return 0;
  });

  if (auto masks = kv.get_list("edit.masks"); !masks.empty()) {
    if (masks.size() != s.cameras.size()) {
      throw ParseError(path.string(), kv.line_of("edit.masks"), "masks: expected one mask per camera");
    }
    for (const auto& f : masks) {
      Latent m = io::read_netpbm(detail::resolve(base, f));
      if (m.channels() != 1) throw ParseError(f, 0, "mask must be a grayscale PGM");
      s.masks.emplace_back(vcac::BlendMask(splat::latent_of_image(m, s.config.pool)));
    }
  }

  ls.edit_threshold = kv.get_double("metrics.edit_threshold", 0.05);
  detail::with_context(path, "[score]", [&] {
    attach_scorer(ls, kv, base);
    return 0;
  });
  kv.reject_unknown();
  detail::with_context(path, "session", [&] {
    s.validate();
    return 0;
  });

  ls.snapshot["session"] = kv.to_json();
  ls.snapshot["tas"] = to_json(s.config);
  ls.snapshot["cameras"] = tas::camera_ids(s.cameras);
  return ls;
}

/// Change mask of the edit per camera: against the reference when the
/// session has one, else against the method's own final edited views.
inline std::vector<Latent> edit_masks(const LoadedSession& ls, const std::vector<Latent>& edited) {
  const auto& s = ls.session;
  std::vector<Latent> m;
  for (std::size_t i = 0; i < s.cameras.size(); ++i) {
    const Latent& changed = s.reference.empty() ? edited[i] : s.reference[i];
    m.push_back(tas::change_mask(changed, s.z_src0[i], ls.edit_threshold));
  }
  return m;
}

}  // namespace trajedit::app
