// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "trajedit/core/errors.hpp"
#include "trajedit/diffusion/schedule.hpp"

namespace trajedit::distill {

/// omega(t) of the distillation gradient.
class WeightSchedule {
 public:
  enum class Kind { Constant, StdSquared };

  static WeightSchedule constant(double value = 1.0) {
    if (!(value > 0.0)) throw DomainError("constant weight must be positive");
    return WeightSchedule(Kind::Constant, value);
  }
  /// omega(t) = 1 - abar_t
  static WeightSchedule std_squared() { return WeightSchedule(Kind::StdSquared, 1.0); }

  double operator()(const diffusion::NoiseSchedule& s, int t) const {
    switch (kind_) {
      case Kind::Constant:
        return value_;
      case Kind::StdSquared:
        return 1.0 - s.alpha_bar(t);
    }
    return value_;
  }

  Kind kind() const noexcept { return kind_; }

 private:
  WeightSchedule(Kind k, double v) : kind_(k), value_(v) {}
  Kind kind_;
  double value_;
};

enum class AnnealingCurve { Linear, Sqrt };

inline AnnealingCurve parse_annealing_curve(std::string_view name) {
  if (name == "linear") return AnnealingCurve::Linear;
  if (name == "sqrt") return AnnealingCurve::Sqrt;
  throw Error("unknown annealing curve '" + std::string(name) + "'");
}

inline const char* to_string(AnnealingCurve c) { return c == AnnealingCurve::Linear ? "linear" : "sqrt"; }

/// Strictly decreasing timesteps t_1 > ... > t_N.
struct AnnealingSchedule {
  std::vector<int> timesteps;
  AnnealingCurve curve = AnnealingCurve::Linear;

  std::size_t size() const noexcept { return timesteps.size(); }
  int operator[](std::size_t n) const { return timesteps.at(n); }
};

/// N strictly decreasing integer timesteps from t_hi to t_lo. The sqrt curve
/// spends more steps near t_lo. Rounding collisions are resolved by pushing
/// later entries down and earlier entries up, so both endpoints stay exact.
inline AnnealingSchedule build_annealing(int count, int t_hi, int t_lo, AnnealingCurve curve, int max_t = -1) {
  if (count < 2) throw DomainError("build_annealing: N must be >= 2");
  if (!(t_hi > t_lo && t_lo >= 1)) throw DomainError("build_annealing: need t_hi > t_lo >= 1");
  if (max_t >= 0 && t_hi > max_t) throw DomainError("build_annealing: t_hi exceeds T");
  if (count > t_hi - t_lo + 1) {
    throw DomainError("build_annealing: " + std::to_string(count) + " distinct timesteps do not fit in [" +
                      std::to_string(t_lo) + ", " + std::to_string(t_hi) + "]");
  }
  std::vector<int> ts(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n) {
    const double u = static_cast<double>(n) / (count - 1);
    const double f = curve == AnnealingCurve::Linear ? u : std::sqrt(u);
    ts[n] = static_cast<int>(std::lround(t_hi - (t_hi - t_lo) * f));
  }
  ts.front() = t_hi;
  ts.back() = t_lo;
  for (int n = 1; n < count; ++n) {
    if (ts[n] >= ts[n - 1]) ts[n] = ts[n - 1] - 1;
  }
  ts.back() = t_lo;
  for (int n = count - 2; n >= 0; --n) {
    if (ts[n] <= ts[n + 1]) ts[n] = ts[n + 1] + 1;
  }
  return AnnealingSchedule{std::move(ts), curve};
}

}  // namespace trajedit::distill
