// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "trajedit/core/errors.hpp"

namespace trajedit::diffusion {

enum class ScheduleKind { LinearAlphaBar, Cosine };

inline ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "linear" || name == "linear-alphabar") return ScheduleKind::LinearAlphaBar;
  if (name == "cosine") return ScheduleKind::Cosine;
  throw ScheduleError("unknown schedule kind '" + std::string(name) + "'");
}

inline const char* to_string(ScheduleKind k) {
  return k == ScheduleKind::LinearAlphaBar ? "linear-alphabar" : "cosine";
}

/// Cumulative noise coefficients alpha_bar[t] for t = 0..T with alpha_bar[0] = 1.
/// Samplers step t -> t-1, so the final DDCM step (t = 1) is a pure
/// clean-latent prediction.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
    if (alpha_bar_.size() < 2) throw ScheduleError("schedule needs T >= 1 (at least two alpha_bar entries)");
    if (alpha_bar_.front() != 1.0) throw ScheduleError("alpha_bar[0] must equal 1");
    for (std::size_t t = 1; t < alpha_bar_.size(); ++t) {
      const double a = alpha_bar_[t];
      if (!(a > 0.0) || !(a < alpha_bar_[t - 1])) {
        throw ScheduleError("alpha_bar must be strictly decreasing and positive; violated at t=" +
                            std::to_string(t));
      }
    }
    scale_.resize(alpha_bar_.size());
    std_.resize(alpha_bar_.size());
    for (std::size_t t = 0; t < alpha_bar_.size(); ++t) {
      scale_[t] = std::sqrt(alpha_bar_[t]);
      std_[t] = std::sqrt(1.0 - alpha_bar_[t]);
    }
  }

  int steps() const noexcept { return static_cast<int>(alpha_bar_.size()) - 1; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

  double alpha_bar(int t) const { return alpha_bar_.at(checked(t)); }
  /// sqrt(alpha_bar_t)
  double scale(int t) const { return scale_.at(checked(t)); }
  /// sqrt(1 - alpha_bar_t)
  double noise_std(int t) const { return std_.at(checked(t)); }
  /// noise_std(t) / scale(t)
  double gamma(int t) const { return noise_std(t) / scale(t); }

  void require_timestep(int t, int lo, const char* op) const {
    if (t < lo || t > steps()) {
      throw DomainError(std::string(op) + ": timestep " + std::to_string(t) + " outside [" + std::to_string(lo) +
                        ", " + std::to_string(steps()) + "]");
    }
  }

 private:
  std::size_t checked(int t) const {
    if (t < 0 || t > steps()) {
      throw DomainError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
    }
    return static_cast<std::size_t>(t);
  }

  std::vector<double> alpha_bar_;
  std::vector<double> scale_;
  std::vector<double> std_;
};

/// Builds a schedule with alpha_bar_0 = 1 and alpha_bar_T = floor.
/// Linear interpolates alpha_bar; cosine rescales the improved-DDPM cosine
/// curve onto [floor, 1].
inline NoiseSchedule build_schedule(ScheduleKind kind, int steps, double floor) {
  if (steps < 1) throw ScheduleError("T must be >= 1, got " + std::to_string(steps));
  if (!(floor > 0.0 && floor < 1.0)) throw ScheduleError("floor must lie in (0, 1), got " + std::to_string(floor));
  std::vector<double> ab(static_cast<std::size_t>(steps) + 1);
  const double T = steps;
  switch (kind) {
    case ScheduleKind::LinearAlphaBar:
      for (int t = 0; t <= steps; ++t) ab[t] = 1.0 - (1.0 - floor) * (t / T);
      break;
    case ScheduleKind::Cosine: {
      constexpr double s = 0.008;
      auto f = [&](double t) {
        const double c = std::cos((t / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
      };
      const double f0 = f(0.0);
      const double fT = f(T);
      for (int t = 0; t <= steps; ++t) {
        const double u = (f(t) - fT) / (f0 - fT);
        ab[t] = floor + (1.0 - floor) * u;
      }
      break;
    }
  }
  ab.front() = 1.0;
  ab.back() = floor;
  return NoiseSchedule(std::move(ab));
}

inline NoiseSchedule default_schedule() { return build_schedule(ScheduleKind::LinearAlphaBar, 50, 0.01); }

}  // namespace trajedit::diffusion
