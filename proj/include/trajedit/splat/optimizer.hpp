// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "trajedit/splat/cloud.hpp"

namespace trajedit::splat {

/// Learning-rate multipliers per parameter group, applied on top of eta.
struct GroupRates {
  double position = 0.1;
  double log_scale = 1.0;
  double color = 1.0;
  double opacity = 1.0;

  double for_param(int k) const {
    if (k < 3) return position;
    if (k == 3) return log_scale;
    if (k < 7) return color;
    return opacity;
  }
};

/// Plain gradient descent theta <- theta - eta * rate(group) * grad.
template <class Real>
BasicGaussianCloud<Real> apply_grad_step(const BasicGaussianCloud<Real>& cloud, const BasicCloudGradients<Real>& grads,
                                         double eta, const GroupRates& rates = {}) {
  if (!(eta > 0.0)) throw DomainError("apply_grad_step: eta must be positive");
  if (grads.size() != cloud.size()) throw ShapeError("apply_grad_step: gradient count does not match cloud");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (int k = 0; k < kParamsPerPrimitive; ++k) {
      if (std::isnan(static_cast<double>(param(grads.primitives[i], k)))) {
        throw DomainError("apply_grad_step: NaN gradient in primitive " + std::to_string(i) + " (" + param_name(k) + ")");
      }
    }
  }
  BasicGaussianCloud<Real> out = cloud;
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (int k = 0; k < kParamsPerPrimitive; ++k) {
      param(out.primitives[i], k) -= static_cast<Real>(eta * rates.for_param(k)) * param(grads.primitives[i], k);
    }
  }
  return out;
}

}  // namespace trajedit::splat
