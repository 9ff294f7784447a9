// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "trajedit/splat/losses.hpp"

namespace trajedit::tas {

struct LossTerms {
  double l1 = 0.0;
  double perceptual = 0.0;
  double anchor = 0.0;
  double total = 0.0;
  Latent grad_view;                    // dL/d(view)
  splat::CloudGradients grad_anchor;   // d(lambda_anchor * anchor)/d(cloud)
};

/// L = L1 + lambda_lpips * pyramid + lambda_anchor * anchor, with the
/// gradient split into the image part (to push through the renderer) and the
/// direct cloud part.
inline LossTerms compute_loss(const Latent& view, const Latent& pseudo_gt, const splat::GaussianCloud& cloud,
                              const splat::GaussianCloud& cloud0, double lambda_lpips, double lambda_anchor) {
  if (lambda_lpips < 0.0 || lambda_anchor < 0.0) throw DomainError("compute_loss: loss weights must be >= 0");
  LossTerms out;
  out.l1 = splat::l1_loss(view, pseudo_gt);
  out.grad_view = splat::l1_loss_grad(view, pseudo_gt);
  if (lambda_lpips > 0.0) {
    out.perceptual = splat::perceptual_loss(view, pseudo_gt);
    const Latent gp = splat::perceptual_loss_grad(view, pseudo_gt);
    for (std::size_t i = 0; i < gp.size(); ++i) out.grad_view[i] += lambda_lpips * gp[i];
  }
  out.anchor = splat::anchor_loss(cloud, cloud0);
  out.grad_anchor = splat::anchor_loss_grad(cloud, cloud0);
  for (auto& g : out.grad_anchor.primitives)
    for (int k = 0; k < splat::kParamsPerPrimitive; ++k) splat::param(g, k) *= lambda_anchor;
  out.total = out.l1 + lambda_lpips * out.perceptual + lambda_anchor * out.anchor;
  return out;
}

}  // namespace trajedit::tas
