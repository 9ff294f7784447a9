// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "trajedit/core/tensor.hpp"
#include "trajedit/diffusion/schedule.hpp"

namespace trajedit::diffusion {

/// Conditioning signal y. `tokens` feed the tiny denoiser and cross-attention
/// alignment; `target_mode` redirects analytic-score lookups to another
/// component set.
struct Condition {
  std::string id;
  std::vector<int> tokens;
  std::optional<std::string> target_mode;

  const std::string& score_key() const noexcept { return target_mode ? *target_mode : id; }
};

/// Behavioral contract of an epsilon-predictor: deterministic in (z, t, y),
/// output shape equals input shape.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;
  virtual Latent eps(const Latent& z, int t, const Condition& y) const = 0;
};

struct GmmComponent {
  Latent mean;
  double weight = 1.0;
};

/// Exact epsilon-prediction for an isotropic Gaussian mixture data
/// distribution. At time t component i has mean scale(t)*mu_i and variance
/// v_t = abar_t * s0^2 + (1 - abar_t); eps = -std(t) * grad log q_t(z).
class AnalyticGMMScore final : public ScoreModel {
 public:
  AnalyticGMMScore(NoiseSchedule schedule, double data_variance)
      : schedule_(std::move(schedule)), data_variance_(data_variance) {
    if (data_variance < 0.0) throw DomainError("AnalyticGMMScore: data variance must be >= 0");
  }

  /// Registers the component set for a condition key. Weights must sum to 1
  /// within 1e-9. `variance_override` replaces the shared data variance for
  /// this key.
  void set_components(const std::string& key, std::vector<GmmComponent> components,
                      std::optional<double> variance_override = std::nullopt) {
    if (components.empty()) throw DomainError("AnalyticGMMScore: condition '" + key + "' has no components");
    double total = 0.0;
    for (const auto& c : components) {
      if (!(c.weight > 0.0 && c.weight <= 1.0)) throw DomainError("AnalyticGMMScore: weights must lie in (0, 1]");
      if (c.mean.shape() != components.front().mean.shape()) {
        throw ShapeError("AnalyticGMMScore: component means of '" + key + "' differ in shape");
      }
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw DomainError("AnalyticGMMScore: weights of '" + key + "' sum to " + std::to_string(total));
    }
    if (variance_override && *variance_override < 0.0) throw DomainError("AnalyticGMMScore: variance must be >= 0");
    sets_[key] = ComponentSet{std::move(components), variance_override.value_or(data_variance_)};
  }

  bool has(const std::string& key) const { return sets_.contains(key); }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  double data_variance() const noexcept { return data_variance_; }

  Latent eps(const Latent& z, int t, const Condition& y) const override {
    const ComponentSet& set = lookup(y);
    check_shape(set, z);
    Latent out(z.shape());
    const double sd = schedule_.noise_std(t);
    if (sd == 0.0) return out;
    const double a = schedule_.scale(t);
    const double v = schedule_.alpha_bar(t) * set.variance + (1.0 - schedule_.alpha_bar(t));
    const auto r = responsibilities(set, z, a, v);
    for (std::size_t i = 0; i < set.components.size(); ++i) {
      if (r[i] == 0.0) continue;
      const Latent& mu = set.components[i].mean;
      const double k = sd * r[i] / v;
      for (std::size_t j = 0; j < z.size(); ++j) out[j] += k * (z[j] - a * mu[j]);
    }
    return out;
  }

  /// Closed-form log q_t(z) of the time-t mixture marginal.
  double log_density(const Latent& z, int t, const Condition& y) const {
    const ComponentSet& set = lookup(y);
    check_shape(set, z);
    const double a = schedule_.scale(t);
    const double v = schedule_.alpha_bar(t) * set.variance + (1.0 - schedule_.alpha_bar(t));
    if (!(v > 0.0)) throw DomainError("log_density: degenerate marginal variance at t=" + std::to_string(t));
    std::vector<double> logits(set.components.size());
    for (std::size_t i = 0; i < set.components.size(); ++i) {
      logits[i] = std::log(set.components[i].weight) - squared_distance(z, set.components[i].mean, a) / (2.0 * v);
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double acc = 0.0;
    for (double l : logits) acc += std::exp(l - m);
    return m + std::log(acc) - 0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi * v);
  }

 private:
  struct ComponentSet {
    std::vector<GmmComponent> components;
    double variance = 0.0;
  };

  const ComponentSet& lookup(const Condition& y) const {
    auto it = sets_.find(y.score_key());
    if (it == sets_.end()) throw MissingFieldError("AnalyticGMMScore: unknown condition id '" + y.score_key() + "'");
    return it->second;
  }

  static void check_shape(const ComponentSet& set, const Latent& z) {
    if (set.components.front().mean.shape() != z.shape()) {
      throw ShapeError("AnalyticGMMScore: latent shape " + to_string(z.shape()) + " does not match component shape " +
                       to_string(set.components.front().mean.shape()));
    }
  }

  static double squared_distance(const Latent& z, const Latent& mu, double a) {
    double s = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double d = z[j] - a * mu[j];
      s += d * d;
    }
    return s;
  }

  static std::vector<double> responsibilities(const ComponentSet& set, const Latent& z, double a, double v) {
    std::vector<double> r(set.components.size());
    if (r.size() == 1) {
      r[0] = 1.0;
      return r;
    }
    for (std::size_t i = 0; i < r.size(); ++i) {
      r[i] = std::log(set.components[i].weight) - squared_distance(z, set.components[i].mean, a) / (2.0 * v);
    }
    const double m = *std::max_element(r.begin(), r.end());
    double total = 0.0;
    for (double& x : r) total += (x = std::exp(x - m));
    for (double& x : r) x /= total;
    return r;
  }

  NoiseSchedule schedule_;
  double data_variance_;
  std::map<std::string, ComponentSet> sets_;
};

/// Convenience: model with a single deterministic component per condition.
inline AnalyticGMMScore point_mass_score(const NoiseSchedule& s,
                                         const std::vector<std::pair<std::string, Latent>>& means) {
  AnalyticGMMScore model(s, 0.0);
  for (const auto& [key, mu] : means) model.set_components(key, {GmmComponent{mu, 1.0}});
  return model;
}

}  // namespace trajedit::diffusion
