// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "trajedit/core/rng.hpp"
#include "trajedit/distill/pseudo_gt.hpp"
#include "trajedit/distill/residual.hpp"
#include "trajedit/distill/weighting.hpp"

namespace {

using namespace trajedit;
using namespace trajedit::distill;
using diffusion::AnalyticGMMScore;
using diffusion::GmmComponent;

const Shape3 kShape{3, 4, 4};

Condition cond(const std::string& id) { return Condition{id, {1, 2}, std::nullopt}; }

// Score model returning a fixed latent regardless of input.
class ConstantScore final : public ScoreModel {
 public:
  explicit ConstantScore(Latent e) : e_(std::move(e)) {}
  Latent eps(const Latent&, int, const Condition&) const override { return e_; }

 private:
  Latent e_;
};

struct Fixture : ::testing::Test {
  NoiseSchedule sched = diffusion::default_schedule();
  Rng rng{42};
  AnalyticGMMScore model{sched, 0.25};
  AnalyticGMMScore aux{sched, 0.25};

  void SetUp() override {
    model.set_components("y", {{rng.normal_like(kShape), 0.3}, {rng.normal_like(kShape), 0.7}});
    model.set_components("src", {{rng.normal_like(kShape), 1.0}});
    model.set_components("empty", {{rng.normal_like(kShape), 0.5}, {rng.normal_like(kShape), 0.5}});
    model.set_components("neg", {{rng.normal_like(kShape), 1.0}});
    aux.set_components("y", {{rng.normal_like(kShape), 1.0}});
  }

  PseudoGtContext full_context() {
    PseudoGtContext ctx;
    ctx.primary = &model;
    ctx.auxiliary = &aux;
    ctx.reference = rng.normal_like(kShape);
    ctx.reference_condition = cond("src");
    ctx.empty_condition = cond("empty");
    ctx.negative_condition = cond("neg");
    ctx.guidance_scale = 2.0;
    return ctx;
  }
};

// ---- pseudo-GT zoo ---------------------------------------------------------

TEST_F(Fixture, SdsWithExactNoiseIsIdentity) {
  const Latent z_pi = rng.normal_like(kShape), eps = rng.normal_like(kShape);
  const ConstantScore oracle(eps);
  PseudoGtContext ctx;
  ctx.primary = &oracle;
  EXPECT_EQ(pseudo_gt(PseudoGtKind::SDS, ctx, z_pi, eps, 20, cond("y"), sched), z_pi);
}

TEST_F(Fixture, DdsWithSelfReferenceIsIdentity) {
  const Latent z_pi = rng.normal_like(kShape), eps = rng.normal_like(kShape);
  PseudoGtContext ctx;
  ctx.primary = &model;
  ctx.reference = z_pi;
  ctx.reference_condition = cond("y");
  EXPECT_EQ(pseudo_gt(PseudoGtKind::DDS, ctx, z_pi, eps, 33, cond("y"), sched), z_pi);
}

TEST_F(Fixture, SdsPointMassLandsOnMean) {
  const Latent mu = rng.normal_like(kShape);
  const auto pm = diffusion::point_mass_score(sched, {{"y", mu}});
  PseudoGtContext ctx;
  ctx.primary = &pm;
  for (int t : {1, 10, 49, 50}) {
    const Latent z_pi = rng.normal_like(kShape), eps = rng.normal_like(kShape);
    const Latent pgt = pseudo_gt(PseudoGtKind::SDS, ctx, z_pi, eps, t, cond("y"), sched);
    EXPECT_LE(max_abs_diff(pgt, mu), 1e-10) << "t=" << t;
  }
}

// Delta recomputed from direct score calls, independent of pseudo_gt's path.
TEST_F(Fixture, ZooRowsMatchDirectRecomputation) {
  PseudoGtContext ctx = full_context();
  const Latent z_pi = rng.normal_like(kShape), eps = rng.normal_like(kShape);
  const int t = 27;
  const double g = sched.gamma(t);
  const Latent z_t = diffusion::add_noise(sched, z_pi, eps, t);
  const Condition y = cond("y");
  const Latent e_y = model.eps(z_t, t, y);

  auto check = [&](PseudoGtKind kind, const Latent& delta) {
    const Latent pgt = pseudo_gt(kind, ctx, z_pi, eps, t, y, sched);
    Latent want(kShape);
    for (std::size_t i = 0; i < want.size(); ++i) want[i] = z_pi[i] + g * delta[i];
    EXPECT_LE(max_abs_diff(pgt, want), 1e-12) << to_string(kind);
  };
  check(PseudoGtKind::SDS, eps - e_y);
  check(PseudoGtKind::VSD, aux.eps(z_t, t, y) - e_y);
  const Latent z_ref = diffusion::add_noise(sched, *ctx.reference, eps, t);
  check(PseudoGtKind::DDS, model.eps(z_ref, t, cond("src")) - e_y);

  Latent z_s = z_t;
  for (int k = t; k > t - 5; --k) {
    const Latent e = model.eps(z_s, k, cond("empty"));
    const Latent x0 = diffusion::predict_x0(sched, z_s, e, k);
    z_s = diffusion::add_noise(sched, x0, e, k - 1);
  }
  check(PseudoGtKind::ISM, model.eps(z_s, t - 5, cond("empty")) - e_y);

  const Latent e_empty = model.eps(z_t, t, cond("empty"));
  const Latent e_neg = model.eps(z_t, t, cond("neg"));
  Latent nfsd(kShape);
  for (std::size_t i = 0; i < nfsd.size(); ++i) nfsd[i] = e_neg[i] - e_empty[i] - 2.0 * (e_y[i] - e_empty[i]);
  check(PseudoGtKind::NFSD, nfsd);
}

TEST_F(Fixture, NfsdDeltaHookIsUsed) {
  PseudoGtContext ctx = full_context();
  ctx.delta_c = [](const Latent& z, int, const Condition&) { return Latent(z.shape(), 1.0); };
  const Latent z_pi = rng.normal_like(kShape), eps = rng.normal_like(kShape);
  const Latent z_t = diffusion::add_noise(sched, z_pi, eps, 10);
  const Latent d = pseudo_gt_delta(PseudoGtKind::NFSD, ctx, z_pi, eps, 10, cond("y"), sched);
  const Latent e_neg = model.eps(z_t, 10, cond("neg")), e_empty = model.eps(z_t, 10, cond("empty"));
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d[i], e_neg[i] - e_empty[i] - 2.0, 1e-12);
}

TEST_F(Fixture, IsmInversionClampsAtZero) {
  PseudoGtContext ctx = full_context();
  const Latent z = rng.normal_like(kShape);
  EXPECT_EQ(ism_inversion_latent(sched, ctx, z, 3).second, 0);
  EXPECT_EQ(ism_inversion_latent(sched, ctx, z, 30).second, 25);
  ctx.ism_step = 0;
  EXPECT_THROW(ism_inversion_latent(sched, ctx, z, 30), DomainError);
}

// Qualitative check: with s = t-1 and the empty prompt equal to y, ISM and
// VSD (aux = primary) stay close. No hard tolerance applies to this case.
TEST_F(Fixture, IsmNearVsdForSingleStep) {
  PseudoGtContext ctx;
  ctx.primary = &model;
  ctx.auxiliary = &model;
  ctx.empty_condition = cond("y");
  ctx.ism_step = 1;
  const Latent z_pi = rng.normal_like(kShape), eps = rng.normal_like(kShape);
  const int t = 40;
  const Latent ism = pseudo_gt(PseudoGtKind::ISM, ctx, z_pi, eps, t, cond("y"), sched);
  const Latent vsd = pseudo_gt(PseudoGtKind::VSD, ctx, z_pi, eps, t, cond("y"), sched);
  const Latent sds = pseudo_gt(PseudoGtKind::SDS, ctx, z_pi, eps, t, cond("y"), sched);
  EXPECT_LT(l2_distance(ism, vsd), l2_distance(sds, vsd));
}

TEST_F(Fixture, MissingContextFieldsAreNamed) {
  const Latent z = rng.normal_like(kShape);
  PseudoGtContext ctx;
  try {
    pseudo_gt(PseudoGtKind::SDS, ctx, z, z, 5, cond("y"), sched);
    FAIL();
  } catch (const MissingFieldError& e) {
    EXPECT_NE(std::string(e.what()).find("primary"), std::string::npos);
  }
  ctx.primary = &model;
  EXPECT_THROW(pseudo_gt(PseudoGtKind::VSD, ctx, z, z, 5, cond("y"), sched), MissingFieldError);
  EXPECT_THROW(pseudo_gt(PseudoGtKind::DDS, ctx, z, z, 5, cond("y"), sched), MissingFieldError);
  EXPECT_THROW(pseudo_gt(PseudoGtKind::ISM, ctx, z, z, 5, cond("y"), sched), MissingFieldError);
  EXPECT_THROW(pseudo_gt(PseudoGtKind::NFSD, ctx, z, z, 5, cond("y"), sched), MissingFieldError);
  EXPECT_THROW(pseudo_gt(PseudoGtKind::SDS, ctx, z, z, 0, cond("y"), sched), DomainError);
}

TEST(PseudoGtKindNames, ParseRoundTrip) {
  for (auto k : {PseudoGtKind::SDS, PseudoGtKind::VSD, PseudoGtKind::DDS, PseudoGtKind::ISM, PseudoGtKind::NFSD}) {
    EXPECT_EQ(parse_pseudo_gt_kind(to_string(k)), k);
  }
  EXPECT_EQ(parse_pseudo_gt_kind("sjc"), PseudoGtKind::SDS);
  EXPECT_THROW(parse_pseudo_gt_kind("CSD"), Error);
}

// ---- residuals -------------------------------------------------------------

TEST(Residual, ClassicTrivialCases) {
  const auto s = diffusion::default_schedule();
  const Latent a(Shape3{1, 1, 2}, std::vector<double>{0.5, 0.5});
  EXPECT_EQ(sds_residual_classic(a, a, 10, WeightSchedule::std_squared(), s), Latent(a.shape()));
  const Latent b(Shape3{1, 1, 2}, std::vector<double>{-0.5, 1.5});
  const Latent r = sds_residual_classic(a, b, 10, WeightSchedule::constant(2.0), s);
  EXPECT_DOUBLE_EQ(r[0], 2.0);
  EXPECT_DOUBLE_EQ(r[1], -2.0);
}

TEST(Residual, ReconTrivialCases) {
  // abar = 0.2 gives scale/std = 0.5.
  const NoiseSchedule s({1.0, 0.8, 0.2});
  const Latent one(Shape3{1, 1, 1}, 1.0), zero(Shape3{1, 1, 1}, 0.0);
  EXPECT_EQ(sds_residual_recon(one, one, 2, WeightSchedule::constant(), s), zero);
  // abar = 0.8 gives scale/std = 2.
  EXPECT_NEAR(sds_residual_recon(one, zero, 1, WeightSchedule::constant(), s)[0], 2.0, 1e-14);
  EXPECT_THROW(sds_residual_recon(one, zero, 0, WeightSchedule::constant(), s), DomainError);
}

TEST(Residual, EquivalenceHundredTrials) {
  const auto report = assert_sds_equivalence(100, 2024);
  EXPECT_EQ(report.trials, 100);
  EXPECT_TRUE(report.passed()) << report.max_abs_diff;
  EXPECT_THROW(assert_sds_equivalence(0, 1), DomainError);
}

TEST(Residual, EquivalenceWithPerfectPredictorIsZero) {
  const auto s = diffusion::default_schedule();
  Rng rng(3);
  const Latent z_pi = rng.normal_like(kShape), eps = rng.normal_like(kShape);
  const ConstantScore oracle(eps);
  PseudoGtContext ctx;
  ctx.primary = &oracle;
  const Latent pgt = pseudo_gt(PseudoGtKind::SDS, ctx, z_pi, eps, 20, cond("y"), s);
  const auto w = WeightSchedule::std_squared();
  EXPECT_EQ(sds_residual_classic(oracle.eps(z_pi, 20, cond("y")), eps, 20, w, s), Latent(kShape));
  EXPECT_EQ(sds_residual_recon(z_pi, pgt, 20, w, s), Latent(kShape));
}

// ---- weights and annealing ---------------------------------------------------

TEST(Weighting, Kinds) {
  const auto s = diffusion::default_schedule();
  EXPECT_EQ(WeightSchedule::constant()(s, 7), 1.0);
  EXPECT_DOUBLE_EQ(WeightSchedule::std_squared()(s, 25), 1.0 - s.alpha_bar(25));
  for (int t = 1; t <= s.steps(); ++t) EXPECT_GT(WeightSchedule::std_squared()(s, t), 0.0);
  EXPECT_THROW(WeightSchedule::constant(0.0), DomainError);
}

TEST(Annealing, Examples) {
  EXPECT_EQ(build_annealing(5, 50, 10, AnnealingCurve::Linear).timesteps, (std::vector<int>{50, 40, 30, 20, 10}));
  EXPECT_EQ(build_annealing(2, 50, 1, AnnealingCurve::Linear).timesteps, (std::vector<int>{50, 1}));
  EXPECT_EQ(build_annealing(2, 50, 1, AnnealingCurve::Sqrt).timesteps, (std::vector<int>{50, 1}));
  const auto sq = build_annealing(4, 40, 10, AnnealingCurve::Sqrt).timesteps;
  EXPECT_EQ(sq.front(), 40);
  EXPECT_EQ(sq.back(), 10);
}

TEST(Annealing, StrictlyDecreasingProperty) {
  for (auto curve : {AnnealingCurve::Linear, AnnealingCurve::Sqrt}) {
    for (int hi = 2; hi <= 60; hi += 3) {
      for (int lo = 1; lo < hi; lo += 2) {
        for (int n = 2; n <= hi - lo + 1; ++n) {
          const auto ts = build_annealing(n, hi, lo, curve).timesteps;
          ASSERT_EQ(static_cast<int>(ts.size()), n);
          ASSERT_EQ(ts.front(), hi);
          ASSERT_EQ(ts.back(), lo);
          for (int i = 1; i < n; ++i) ASSERT_LT(ts[i], ts[i - 1]) << hi << " " << lo << " " << n;
        }
      }
    }
  }
}

TEST(Annealing, Rejections) {
  EXPECT_THROW(build_annealing(1, 50, 10, AnnealingCurve::Linear), DomainError);
  EXPECT_THROW(build_annealing(5, 10, 10, AnnealingCurve::Linear), DomainError);
  EXPECT_THROW(build_annealing(5, 10, 0, AnnealingCurve::Linear), DomainError);
  EXPECT_THROW(build_annealing(12, 20, 10, AnnealingCurve::Linear), DomainError);
  EXPECT_THROW(build_annealing(5, 60, 10, AnnealingCurve::Linear, 50), DomainError);
  EXPECT_THROW(parse_annealing_curve("cubic"), Error);
}

}  // namespace
