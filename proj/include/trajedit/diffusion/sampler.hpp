// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "trajedit/core/tensor.hpp"
#include "trajedit/diffusion/schedule.hpp"

namespace trajedit::diffusion {

/// scale(t) * x0 + std(t) * eps
template <class Real>
BasicLatent<Real> add_noise(const NoiseSchedule& s, const BasicLatent<Real>& x0, const BasicLatent<Real>& eps,
                            int t) {
  s.require_timestep(t, 0, "add_noise");
  return axpby(static_cast<Real>(s.scale(t)), x0, static_cast<Real>(s.noise_std(t)), eps, "add_noise");
}

/// Clean-latent prediction (z_t - std(t) * eps_pred) / scale(t).
template <class Real>
BasicLatent<Real> predict_x0(const NoiseSchedule& s, const BasicLatent<Real>& z_t, const BasicLatent<Real>& eps_pred,
                             int t) {
  s.require_timestep(t, 1, "predict_x0");
  require_same_shape(z_t, eps_pred, "predict_x0");
  const Real scale = static_cast<Real>(s.scale(t));
  if (!(scale > Real(0))) throw DomainError("predict_x0: scale(t) is zero");
  const Real sd = static_cast<Real>(s.noise_std(t));
  BasicLatent<Real> out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (z_t[i] - sd * eps_pred[i]) / scale;
  return out;
}

/// One generalized DDIM step t -> t-1:
///   scale(t-1) * x0_hat + sqrt(1 - abar(t-1) - sigma^2) * eps_pred + sigma * noise
template <class Real>
BasicLatent<Real> ddim_step(const NoiseSchedule& s, const BasicLatent<Real>& z_t, const BasicLatent<Real>& eps_pred,
                            int t, double sigma_t, const BasicLatent<Real>& fresh_noise) {
  s.require_timestep(t, 1, "ddim_step");
  require_same_shape(z_t, fresh_noise, "ddim_step");
  // (std_prev - sigma)(std_prev + sigma) instead of 1 - abar - sigma^2: exact
  // zero when sigma equals std(t-1), no cancellation residue.
  const double std_prev = s.noise_std(t - 1);
  const double radicand = (std_prev - sigma_t) * (std_prev + sigma_t);
  if (sigma_t < 0.0 || radicand < -1e-15) {
    throw DomainError("ddim_step: sigma_t^2 = " + std::to_string(sigma_t * sigma_t) + " exceeds 1 - alpha_bar(t-1) = " +
                      std::to_string(1.0 - s.alpha_bar(t - 1)));
  }
  const auto x0 = predict_x0(s, z_t, eps_pred, t);
  const Real a_prev = static_cast<Real>(s.scale(t - 1));
  const Real dir = static_cast<Real>(std::sqrt(std::max(0.0, radicand)));
  const Real sig = static_cast<Real>(sigma_t);
  BasicLatent<Real> out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a_prev * x0[i] + dir * eps_pred[i] + sig * fresh_noise[i];
  return out;
}

/// DDCM step: the DDIM instance with sigma_t = std(t-1), which drops the
/// eps_pred direction term:
///   scale(t-1) * predict_x0(z_t, eps_pred, t) + std(t-1) * fresh_noise
template <class Real>
BasicLatent<Real> ddcm_step(const NoiseSchedule& s, const BasicLatent<Real>& z_t, const BasicLatent<Real>& eps_pred,
                            int t, const BasicLatent<Real>& fresh_noise) {
  s.require_timestep(t, 1, "ddcm_step");
  require_same_shape(z_t, fresh_noise, "ddcm_step");
  const auto x0 = predict_x0(s, z_t, eps_pred, t);
  return axpby(static_cast<Real>(s.scale(t - 1)), x0, static_cast<Real>(s.noise_std(t - 1)), fresh_noise,
               "ddcm_step");
}

/// DDCM written as dynamics of the clean-latent prediction: given the
/// prediction made at step t+1 and the noise eps_{t+1} that formed z_t,
///   x0_hat(t) = x0_hat(t+1) + gamma(t) * (eps_fresh - eps_pred).
template <class Real>
BasicLatent<Real> ddcm_x0_step(const NoiseSchedule& s, const BasicLatent<Real>& x0_pred_prev,
                               const BasicLatent<Real>& eps_fresh, const BasicLatent<Real>& eps_pred, int t) {
  s.require_timestep(t, 1, "ddcm_x0_step");
  if (t > s.steps() - 1) throw DomainError("ddcm_x0_step: t must be <= T-1, got " + std::to_string(t));
  require_same_shape(x0_pred_prev, eps_fresh, "ddcm_x0_step");
  require_same_shape(x0_pred_prev, eps_pred, "ddcm_x0_step");
  const Real g = static_cast<Real>(s.noise_std(t) / s.scale(t));
  BasicLatent<Real> out(x0_pred_prev.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x0_pred_prev[i] + g * (eps_fresh[i] - eps_pred[i]);
  return out;
}

}  // namespace trajedit::diffusion
