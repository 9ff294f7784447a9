// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "trajedit/core/rng.hpp"
#include "trajedit/diffusion/sampler.hpp"
#include "trajedit/diffusion/schedule.hpp"
#include "trajedit/diffusion/score.hpp"

namespace {

using namespace trajedit;
using namespace trajedit::diffusion;

Latent vec(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Latent(Shape3{1, 1, n}, std::move(v));
}

// ---- schedules -------------------------------------------------------------

TEST(Schedule, LinearFourSteps) {
  const auto s = build_schedule(ScheduleKind::LinearAlphaBar, 4, 0.2);
  const std::vector<double> want{1.0, 0.8, 0.6, 0.4, 0.2};
  ASSERT_EQ(s.steps(), 4);
  for (int t = 0; t <= 4; ++t) EXPECT_NEAR(s.alpha_bar(t), want[t], 1e-15);
}

TEST(Schedule, TimeZeroIsClean) {
  for (auto kind : {ScheduleKind::LinearAlphaBar, ScheduleKind::Cosine}) {
    const auto s = build_schedule(kind, 17, 0.05);
    EXPECT_EQ(s.scale(0), 1.0);
    EXPECT_EQ(s.noise_std(0), 0.0);
    EXPECT_EQ(s.gamma(0), 0.0);
  }
}

TEST(Schedule, QuarterAlphaBar) {
  const NoiseSchedule s({1.0, 0.25});
  EXPECT_NEAR(s.scale(1), 0.5, 1e-15);
  EXPECT_NEAR(s.noise_std(1), 0.8660254037844386, 1e-12);
  EXPECT_NEAR(s.gamma(1), 1.7320508075688772, 1e-12);
}

TEST(Schedule, ScaleStdPartitionUnity) {
  for (auto kind : {ScheduleKind::LinearAlphaBar, ScheduleKind::Cosine}) {
    for (int T : {1, 2, 10, 50, 1000}) {
      const auto s = build_schedule(kind, T, 0.01);
      EXPECT_NEAR(s.alpha_bar(T), 0.01, 1e-12);
      for (int t = 0; t <= T; ++t) {
        EXPECT_NEAR(s.scale(t) * s.scale(t) + s.noise_std(t) * s.noise_std(t), 1.0, 1e-12);
        if (t > 0) {
          EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
        }
      }
    }
  }
}

TEST(Schedule, RejectsBadParameters) {
  EXPECT_THROW(build_schedule(ScheduleKind::LinearAlphaBar, 0, 0.1), ScheduleError);
  EXPECT_THROW(build_schedule(ScheduleKind::LinearAlphaBar, 10, 0.0), ScheduleError);
  EXPECT_THROW(build_schedule(ScheduleKind::Cosine, 10, 1.0), ScheduleError);
  EXPECT_THROW(NoiseSchedule({1.0, 0.5, 0.6}), ScheduleError);
  EXPECT_THROW(NoiseSchedule({0.9, 0.5}), ScheduleError);
  EXPECT_THROW(NoiseSchedule({1.0, 0.0}), ScheduleError);
  EXPECT_THROW(parse_schedule_kind("quadratic"), Error);
}

TEST(Schedule, DefaultIsLinearFifty) {
  const auto s = default_schedule();
  EXPECT_EQ(s.steps(), 50);
  EXPECT_NEAR(s.alpha_bar(25), 1.0 - 0.99 * 0.5, 1e-15);
}

// ---- samplers --------------------------------------------------------------

TEST(AddNoise, ZeroSignal) {
  const auto s = default_schedule();
  const Latent e = vec({0.3, -1.2, 2.0});
  const Latent out = add_noise(s, Latent(e.shape()), e, 17);
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_DOUBLE_EQ(out[i], s.noise_std(17) * e[i]);
}

TEST(AddNoise, IdentityAtZero) {
  const auto s = default_schedule();
  const Latent x0 = vec({0.1, 0.2}), e = vec({5.0, -5.0});
  EXPECT_EQ(add_noise(s, x0, e, 0), x0);
}

TEST(AddNoise, QuarterExample) {
  const NoiseSchedule s({1.0, 0.25});
  const Latent out = add_noise(s, vec({1, 1}), vec({2, 0}), 1);
  EXPECT_NEAR(out[0], 2.232051, 1e-6);
  EXPECT_NEAR(out[1], 0.5, 1e-15);
  EXPECT_THROW(add_noise(s, vec({1, 1}), vec({1}), 1), ShapeError);
  EXPECT_THROW(add_noise(s, vec({1}), vec({1}), 2), DomainError);
}

TEST(PredictX0, InvertsAddNoise) {
  const auto s = default_schedule();
  Rng rng(1);
  for (int t = 1; t <= s.steps(); ++t) {
    const Latent x0 = rng.normal_like(Shape3{3, 4, 4});
    const Latent e = rng.normal_like(Shape3{3, 4, 4});
    EXPECT_LE(max_abs_diff(predict_x0(s, add_noise(s, x0, e, t), e, t), x0), 1e-10);
  }
}

TEST(PredictX0, ZeroEpsAndScalarOracle) {
  const auto s = default_schedule();
  Rng rng(2);
  const Latent z = rng.normal_like(Shape3{1, 2, 5});
  const Latent out0 = predict_x0(s, z, Latent(z.shape()), 9);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_DOUBLE_EQ(out0[i], z[i] / s.scale(9));

  for (int trial = 0; trial < 50; ++trial) {
    const int t = rng.uniform_int(1, 50);
    const Latent zt = rng.normal_like(Shape3{1, 1, 6});
    const Latent ep = rng.normal_like(Shape3{1, 1, 6});
    const Latent out = predict_x0(s, zt, ep, t);
    const double ab = 1.0 - 0.99 * t / 50.0;
    for (std::size_t i = 0; i < zt.size(); ++i) {
      EXPECT_NEAR(out[i], (zt[i] - std::sqrt(1 - ab) * ep[i]) / std::sqrt(ab), 1e-12);
    }
  }
  EXPECT_THROW(predict_x0(s, z, z, 0), DomainError);
}

TEST(DdimStep, PerfectPredictorDeterministic) {
  const auto s = default_schedule();
  Rng rng(3);
  const Latent x0 = rng.normal_like(Shape3{2, 3, 3});
  const Latent e = rng.normal_like(Shape3{2, 3, 3});
  const int t = 30;
  const Latent out = ddim_step(s, add_noise(s, x0, e, t), e, t, 0.0, Latent(x0.shape()));
  EXPECT_LE(max_abs_diff(out, add_noise(s, x0, e, t - 1)), 1e-12);
}

TEST(DdimStep, ReducesToDdcm) {
  const auto s = default_schedule();
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int t = rng.uniform_int(1, 50);
    const Latent z = rng.normal_like(Shape3{3, 4, 4});
    const Latent ep = rng.normal_like(Shape3{3, 4, 4});
    const Latent fresh = rng.normal_like(Shape3{3, 4, 4});
    const Latent a = ddim_step(s, z, ep, t, s.noise_std(t - 1), fresh);
    const Latent b = ddcm_step(s, z, ep, t, fresh);
    EXPECT_LE(max_abs_diff(a, b), 1e-12);
  }
}

TEST(DdimStep, ScalarOracleAndDomain) {
  const auto s = default_schedule();
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int t = rng.uniform_int(1, 50);
    const double sig = rng.uniform(0.0, s.noise_std(t - 1));
    const Latent z = rng.normal_like(Shape3{1, 1, 4});
    const Latent ep = rng.normal_like(Shape3{1, 1, 4});
    const Latent fr = rng.normal_like(Shape3{1, 1, 4});
    const Latent out = ddim_step(s, z, ep, t, sig, fr);
    const double ab = 1.0 - 0.99 * t / 50.0, abp = 1.0 - 0.99 * (t - 1) / 50.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const double x0 = (z[i] - std::sqrt(1 - ab) * ep[i]) / std::sqrt(ab);
      const double want = std::sqrt(abp) * x0 + std::sqrt(1 - abp - sig * sig) * ep[i] + sig * fr[i];
      EXPECT_NEAR(out[i], want, 1e-10);
    }
  }
  const Latent z = vec({1.0});
  EXPECT_THROW(ddim_step(s, z, z, 10, s.noise_std(9) * 1.01, z), DomainError);
  EXPECT_THROW(ddim_step(s, z, z, 10, -0.1, z), DomainError);
  EXPECT_THROW(ddim_step(s, z, z, 0, 0.0, z), DomainError);
}

TEST(DdcmStep, PerfectPredictorAndTerminal) {
  const auto s = default_schedule();
  Rng rng(6);
  const Latent x0 = rng.normal_like(Shape3{1, 4, 4});
  const Latent e = rng.normal_like(Shape3{1, 4, 4});
  const Latent fresh = rng.normal_like(Shape3{1, 4, 4});
  const Latent out = ddcm_step(s, add_noise(s, x0, e, 20), e, 20, fresh);
  EXPECT_LE(max_abs_diff(out, add_noise(s, x0, fresh, 19)), 1e-12);

  const Latent z1 = add_noise(s, x0, e, 1);
  EXPECT_LE(max_abs_diff(ddcm_step(s, z1, e, 1, fresh), predict_x0(s, z1, e, 1)), 0.0);
}

TEST(DdcmX0Step, FixedPointAndScalar) {
  const auto s = default_schedule();
  Rng rng(7);
  const Latent x = rng.normal_like(Shape3{1, 1, 5});
  const Latent e = rng.normal_like(Shape3{1, 1, 5});
  EXPECT_EQ(ddcm_x0_step(s, x, e, e, 12), x);

  const Latent ep = rng.normal_like(Shape3{1, 1, 5});
  const Latent out = ddcm_x0_step(s, x, e, ep, 12);
  const double ab = 1.0 - 0.99 * 12 / 50.0;
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(out[i], x[i] + std::sqrt((1 - ab) / ab) * (e[i] - ep[i]), 1e-12);
  }
  EXPECT_THROW(ddcm_x0_step(s, x, e, ep, 50), DomainError);
  EXPECT_THROW(ddcm_x0_step(s, x, e, ep, 0), DomainError);
}

// The two parameterizations of the consistency sampler produce the same x0 sequence.
TEST(DdcmX0Step, TrajectoryMatchesSampler) {
  const auto s = default_schedule();
  AnalyticGMMScore model(s, 0.3);
  Rng init(8);
  model.set_components("y", {{init.normal_like(Shape3{2, 4, 4}), 0.4}, {init.normal_like(Shape3{2, 4, 4}), 0.6}});
  const Condition y{"y", {1}, std::nullopt};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const int T0 = 10;
    Latent z = rng.normal_like(Shape3{2, 4, 4});
    Latent x0_sampler = predict_x0(s, z, model.eps(z, T0, y), T0);
    Latent x0_recur = x0_sampler;
    for (int t = T0 - 1; t >= 1; --t) {
      const Latent fresh = rng.normal_like(Shape3{2, 4, 4});
      z = ddcm_step(s, z, model.eps(z, t + 1, y), t + 1, fresh);
      x0_sampler = predict_x0(s, z, model.eps(z, t, y), t);
      const Latent z_rec = add_noise(s, x0_recur, fresh, t);
      x0_recur = ddcm_x0_step(s, x0_recur, fresh, model.eps(z_rec, t, y), t);
      ASSERT_LE(max_abs_diff(x0_sampler, x0_recur), 1e-10) << "t=" << t;
    }
  }
}

// ---- analytic score --------------------------------------------------------

TEST(GmmScore, StandardNormalIsStdTimesZ) {
  const auto s = default_schedule();
  AnalyticGMMScore model(s, 1.0);
  model.set_components("y", {{Latent(Shape3{1, 1, 3}), 1.0}});
  const Condition y{"y", {1}, std::nullopt};
  const Latent z = vec({0.4, -1.1, 2.5});
  for (int t : {1, 10, 50}) {
    const Latent e = model.eps(z, t, y);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(e[i], s.noise_std(t) * z[i], 1e-14);
  }
}

// Monte-Carlo posterior mean E[eps | z_t] for q_0 = N(0, I), scalar latent.
// Samples are binned around the probe z and averaged.
TEST(GmmScore, MonteCarloPosteriorMean) {
  const auto s = default_schedule();
  AnalyticGMMScore model(s, 1.0);
  model.set_components("y", {{Latent(Shape3{1, 1, 1}), 1.0}});
  const Condition y{"y", {1}, std::nullopt};
  const int t = 25;
  const double probe = 0.7, half_width = 0.05;
  Rng rng(99);
  double sum = 0.0;
  long count = 0;
  for (long k = 0; k < 1'000'000; ++k) {
    const double x0 = rng.normal();
    const double e = rng.normal();
    const double zt = s.scale(t) * x0 + s.noise_std(t) * e;
    if (std::abs(zt - probe) < half_width) {
      sum += e;
      ++count;
    }
  }
  ASSERT_GT(count, 10'000);
  EXPECT_NEAR(model.eps(vec({probe}), t, y)[0], sum / count, 1e-2);
}

TEST(GmmScore, PointMassDeterminesEps) {
  const auto s = default_schedule();
  const Latent mu = vec({1.0, -2.0});
  const auto model = point_mass_score(s, {{"y", mu}});
  const Condition y{"y", {1}, std::nullopt};
  const Latent z = vec({0.3, 0.9});
  const int t = 13;
  const Latent e = model.eps(z, t, y);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(e[i], (z[i] - s.scale(t) * mu[i]) / s.noise_std(t), 1e-14);
}

TEST(GmmScore, SymmetricPairAtOrigin) {
  const auto s = default_schedule();
  AnalyticGMMScore model(s, 0.2);
  model.set_components("y", {{vec({1.0, 2.0}), 0.5}, {vec({-1.0, -2.0}), 0.5}});
  const Latent e = model.eps(vec({0.0, 0.0}), 20, Condition{"y", {1}, std::nullopt});
  EXPECT_EQ(e[0], 0.0);
  EXPECT_EQ(e[1], 0.0);
}

TEST(GmmScore, MatchesFiniteDifferenceOfLogDensity) {
  const auto s = default_schedule();
  Rng rng(10);
  AnalyticGMMScore model(s, 0.5);
  const Shape3 sh{1, 2, 3};
  model.set_components("y", {{rng.normal_like(sh), 0.3}, {rng.normal_like(sh), 0.5}, {rng.normal_like(sh), 0.2}});
  const Condition y{"y", {1}, std::nullopt};
  const double h = 1e-5;
  for (int t : {1, 5, 25, 50}) {
    const Latent z = rng.normal_like(sh);
    const Latent e = model.eps(z, t, y);
    for (std::size_t j = 0; j < z.size(); ++j) {
      Latent zp = z, zm = z;
      zp[j] += h;
      zm[j] -= h;
      const double grad = (model.log_density(zp, t, y) - model.log_density(zm, t, y)) / (2 * h);
      EXPECT_NEAR(e[j], -s.noise_std(t) * grad, 1e-6) << "t=" << t << " j=" << j;
    }
  }
}

TEST(GmmScore, TargetModeRedirectsLookup) {
  const auto s = default_schedule();
  const auto model = point_mass_score(s, {{"edited", vec({3.0})}});
  const Condition direct{"edited", {1}, std::nullopt};
  const Condition redirected{"prompt", {1}, std::string("edited")};
  EXPECT_EQ(model.eps(vec({0.5}), 7, direct), model.eps(vec({0.5}), 7, redirected));
  EXPECT_THROW(model.eps(vec({0.5}), 7, Condition{"prompt", {1}, std::nullopt}), MissingFieldError);
  EXPECT_THROW(model.eps(vec({0.5, 0.1}), 7, direct), ShapeError);
}

TEST(GmmScore, RejectsBadWeights) {
  AnalyticGMMScore model(default_schedule(), 0.0);
  EXPECT_THROW(model.set_components("y", {{vec({0.0}), 0.5}}), DomainError);
  EXPECT_THROW(model.set_components("y", {{vec({0.0}), 1.5}, {vec({0.0}), -0.5}}), DomainError);
  EXPECT_THROW(model.set_components("y", {}), DomainError);
  EXPECT_THROW(AnalyticGMMScore(default_schedule(), -1.0), DomainError);
}

TEST(Sampling, DdcmConvergesToPointMass) {
  const auto s = default_schedule();
  Rng rng(11);
  const Latent mu = rng.normal_like(Shape3{3, 4, 4});
  const auto model = point_mass_score(s, {{"y", mu}});
  const Condition y{"y", {1}, std::nullopt};
  Latent z = rng.normal_like(mu.shape());
  Latent x0 = z;
  for (int t = s.steps(); t >= 1; --t) {
    const Latent e = model.eps(z, t, y);
    x0 = predict_x0(s, z, e, t);
    z = ddcm_step(s, z, e, t, rng.normal_like(mu.shape()));
  }
  EXPECT_LE(max_abs_diff(x0, mu), 1e-3);
  EXPECT_LE(max_abs_diff(z, mu), 1e-3);
}

}  // namespace
