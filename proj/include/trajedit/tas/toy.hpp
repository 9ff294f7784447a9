// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "trajedit/core/rng.hpp"
#include "trajedit/tas/engine.hpp"
#include "trajedit/tas/metrics.hpp"

namespace trajedit::tas {

/// Desk-scale edit: a small cloud seen by a few orbit cameras, and an edited
/// copy with one primitive recolored and moved. The analytic score knows the
/// source renders (variance 0) and the edited renders (variance
/// target_variance) per camera, so every pseudo-GT pulls toward the edited
/// views and carries view-independent noise of size ~ target_variance.
struct ToyEditOptions {
  int primitives = 10;
  int resolution = 64;
  std::vector<double> camera_degrees{-30.0, -10.0, 10.0, 30.0};
  double extent = 2.0;
  double distance = 3.0;
  std::size_t edited_index = 0;
  splat::Vec3<double> edited_color{0.95, 0.15, 0.1};
  splat::Vec3<double> displacement{0.15, 0.05, 0.0};
  double source_variance = 0.0;
  double target_variance = 0.1;
  std::uint64_t scene_seed = 2024;
};

struct ToyEdit {
  GaussianCloud source;
  GaussianCloud edited;
  std::vector<Camera> cameras;
  std::vector<Latent> source_views;
  std::vector<Latent> reference;
  std::shared_ptr<diffusion::AnalyticGMMScore> model;
  Condition y_src{"src", {1, 2, 3}, std::nullopt};
  Condition y_tgt{"tgt", {1, 4, 3}, std::nullopt};
};

inline GaussianCloud toy_cloud(int primitives, std::uint64_t seed) {
  Rng rng(seed);
  GaussianCloud c;
  for (int i = 0; i < primitives; ++i) {
    splat::GaussianParams<double> g;
    // Primitive 0 sits near the middle so every camera sees the edit.
    const double spread = i == 0 ? 0.15 : 0.55;
    for (auto& p : g.position) p = rng.uniform(-spread, spread);
    g.log_scale = std::log(rng.uniform(0.12, 0.2));
    for (auto& col : g.color) col = rng.uniform(0.15, 0.85);
    g.logit_opacity = splat::logit(rng.uniform(0.6, 0.85));
    c.primitives.push_back(g);
  }
  return c;
}

inline ToyEdit make_toy_edit(const ToyEditOptions& opt, const diffusion::NoiseSchedule& schedule, int pool = 1,
                             const splat::Vec3<double>& background = {0.0, 0.0, 0.0}) {
  ToyEdit e;
  e.source = toy_cloud(opt.primitives, opt.scene_seed);
  if (opt.edited_index >= e.source.size()) throw DomainError("toy edit: edited primitive out of range");
  e.edited = e.source;
  auto& g = e.edited.primitives[opt.edited_index];
  g.color = opt.edited_color;
  for (int k = 0; k < 3; ++k) g.position[k] += opt.displacement[k];

  for (std::size_t m = 0; m < opt.camera_degrees.size(); ++m) {
    e.cameras.push_back(splat::orbit_camera("cam" + std::to_string(m), opt.camera_degrees[m], opt.distance, opt.extent,
                                            opt.resolution, opt.resolution));
  }
  e.model = std::make_shared<diffusion::AnalyticGMMScore>(schedule, opt.target_variance);
  for (const auto& cam : e.cameras) {
    Latent src = splat::latent_of_image(splat::render(e.source, cam, background), pool);
    Latent ref = splat::latent_of_image(splat::render(e.edited, cam, background), pool);
    e.model->set_components(AnalyticEditScorer::view_key(e.y_src.id, cam.id), {{src, 1.0}}, opt.source_variance);
    e.model->set_components(AnalyticEditScorer::view_key(e.y_tgt.id, cam.id), {{ref, 1.0}}, opt.target_variance);
    e.source_views.push_back(std::move(src));
    e.reference.push_back(std::move(ref));
  }
  return e;
}

inline std::vector<std::string> camera_ids(const std::vector<Camera>& cams) {
  std::vector<std::string> ids;
  for (const auto& c : cams) ids.push_back(c.id);
  return ids;
}

/// Session over the toy edit with the analytic scorer. `identical` uses the
/// source condition on both branches.
inline EditSession toy_session(const ToyEdit& e, const TasConfig& cfg, bool identical = false, ExecPolicy policy = {}) {
  EditSession s;
  s.config = cfg;
  s.source = e.source;
  s.cameras = e.cameras;
  s.y_src = e.y_src;
  s.y_tgt = identical ? e.y_src : e.y_tgt;
  s.reference = e.reference;
  s.scorer = std::make_shared<AnalyticEditScorer>(e.model, camera_ids(e.cameras));
  s.policy = policy;
  s.prepare();
  return s;
}

/// Mask of the pixels the edit changes, per camera.
inline std::vector<Latent> toy_edit_masks(const ToyEdit& e, double threshold = 0.05) {
  std::vector<Latent> m;
  for (std::size_t i = 0; i < e.cameras.size(); ++i) m.push_back(change_mask(e.reference[i], e.source_views[i], threshold));
  return m;
}

}  // namespace trajedit::tas
