// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trajedit/diffusion/score.hpp"
#include "trajedit/vcac/tiny_denoiser.hpp"

namespace trajedit::tas {

using diffusion::Condition;

/// Epsilon predictions of the source and target branches for all cameras.
struct BranchEps {
  std::vector<Latent> src;
  std::vector<Latent> tgt;
};

/// Evaluates both branches of one editing step. `step` is the 1-based
/// editing step index n (the clock of query injection).
class EditScorer {
 public:
  virtual ~EditScorer() = default;
  virtual BranchEps branch_eps(const std::vector<Latent>& z_src, const std::vector<Latent>& z_tgt, int t, int step,
                               const Condition& y_src, const Condition& y_tgt) const = 0;
};

/// Per-camera analytic scores. A condition key `k` resolves to `k@<camera id>`
/// when the model registers it, and to `k` otherwise, so each view can carry
/// its own component means.
class AnalyticEditScorer final : public EditScorer {
 public:
  AnalyticEditScorer(std::shared_ptr<const diffusion::AnalyticGMMScore> model, std::vector<std::string> camera_ids)
      : model_(std::move(model)), camera_ids_(std::move(camera_ids)) {}

  static std::string view_key(const std::string& key, const std::string& camera_id) { return key + "@" + camera_id; }

  BranchEps branch_eps(const std::vector<Latent>& z_src, const std::vector<Latent>& z_tgt, int t, int,
                       const Condition& y_src, const Condition& y_tgt) const override {
    if (z_src.size() != camera_ids_.size() || z_tgt.size() != camera_ids_.size()) {
      throw ShapeError("AnalyticEditScorer: expected " + std::to_string(camera_ids_.size()) + " views");
    }
    BranchEps out;
    for (std::size_t m = 0; m < camera_ids_.size(); ++m) {
      out.src.push_back(model_->eps(z_src[m], t, resolve(y_src, m)));
      out.tgt.push_back(model_->eps(z_tgt[m], t, resolve(y_tgt, m)));
    }
    return out;
  }

  const diffusion::AnalyticGMMScore& model() const noexcept { return *model_; }

 private:
  Condition resolve(const Condition& y, std::size_t m) const {
    const std::string key = view_key(y.score_key(), camera_ids_[m]);
    if (!model_->has(key)) return y;
    Condition c = y;
    c.target_mode = key;
    return c;
  }

  std::shared_ptr<const diffusion::AnalyticGMMScore> model_;
  std::vector<std::string> camera_ids_;
};

/// Tiny denoiser over all views at once. The source branch runs with the KV
/// sharing configuration and records its activations; the target branch adds
/// query injection and cross-attention control on top, fed by that cache.
/// With `enabled` false both branches run the plain forward pass.
class TinyEditScorer final : public EditScorer {
 public:
  TinyEditScorer(std::shared_ptr<const vcac::TinyDenoiser> model, vcac::VcacHooks hooks, bool enabled,
                 ExecPolicy policy = {})
      : model_(std::move(model)), hooks_(std::move(hooks)), enabled_(enabled), policy_(policy) {}

  BranchEps branch_eps(const std::vector<Latent>& z_src, const std::vector<Latent>& z_tgt, int t, int step,
                       const Condition& y_src, const Condition& y_tgt) const override {
    BranchEps out;
    if (!enabled_) {
      out.src = model_->eps(z_src, t, y_src, {}, nullptr, nullptr, policy_);
      out.tgt = model_->eps(z_tgt, t, y_tgt, {}, nullptr, nullptr, policy_);
      return out;
    }
    vcac::VcacHooks src_hooks;
    src_hooks.kv = hooks_.kv;
    src_hooks.partition = hooks_.partition;
    vcac::ActivationCache cache;
    out.src = model_->eps(z_src, t, y_src, src_hooks, nullptr, &cache, policy_);

    vcac::VcacHooks tgt_hooks = hooks_;
    tgt_hooks.clock = step;
    if (!tgt_hooks.cross_alignment) tgt_hooks.cross_alignment = vcac::align_prompts(y_src.tokens, y_tgt.tokens);
    out.tgt = model_->eps(z_tgt, t, y_tgt, tgt_hooks, &cache, nullptr, policy_);
    return out;
  }

  bool enabled() const noexcept { return enabled_; }

 private:
  std::shared_ptr<const vcac::TinyDenoiser> model_;
  vcac::VcacHooks hooks_;
  bool enabled_;
  ExecPolicy policy_;
};

}  // namespace trajedit::tas
