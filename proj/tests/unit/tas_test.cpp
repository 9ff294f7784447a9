#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "trajedit/splat/gradcheck.hpp"
#include "trajedit/tas/toy.hpp"

namespace fs = std::filesystem;
using namespace trajedit;
using namespace trajedit::tas;

namespace {

TasConfig small_config(int steps = 6, int inner = 4) {
  TasConfig c;
  c.outer_steps = steps;
  c.inner_steps = inner;
  c.t_hi = 45;
  c.t_lo = 2;
  return c;
}

ToyEdit small_toy(const TasConfig& cfg, double target_variance = 0.1, double source_variance = 0.0) {
  ToyEditOptions o;
  o.resolution = 32;
  o.target_variance = target_variance;
  o.source_variance = source_variance;
  return make_toy_edit(o, cfg.schedule());
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("trajedit_tas_" + name);
  fs::remove_all(p);
  return p;
}

class ThrowingScorer final : public EditScorer {
 public:
  ThrowingScorer(std::shared_ptr<const EditScorer> inner, int fail_at) : inner_(std::move(inner)), fail_at_(fail_at) {}
  BranchEps branch_eps(const std::vector<Latent>& zs, const std::vector<Latent>& zt, int t, int step,
                       const Condition& ys, const Condition& yt) const override {
    if (step == fail_at_) throw DomainError("score model exploded");
    return inner_->branch_eps(zs, zt, t, step, ys, yt);
  }

 private:
  std::shared_ptr<const EditScorer> inner_;
  int fail_at_;
};

}  // namespace

// ---- compute_loss ---------------------------------------------------------

TEST(ComputeLoss, ZeroAtFixedPoint) {
  Rng rng(1);
  auto scene = splat::random_scene(rng, 4, 16);
  Latent v = rng.uniform_like(Shape3{3, 16, 16}, 0.0, 1.0);
  auto r = compute_loss(v, v, scene.cloud, scene.cloud, 0.1, 0.5);
  EXPECT_EQ(r.total, 0.0);
  for (double g : r.grad_view.flat()) EXPECT_EQ(g, 0.0);
}

TEST(ComputeLoss, WeightsZeroGiveL1Only) {
  Rng rng(2);
  auto scene = splat::random_scene(rng, 4, 16);
  auto other = scene.cloud;
  other.primitives[0].position[0] += 0.3;
  Latent a = rng.uniform_like(Shape3{3, 16, 16}, 0.0, 1.0), b = rng.uniform_like(Shape3{3, 16, 16}, 0.0, 1.0);
  auto r = compute_loss(a, b, scene.cloud, other, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(r.total, mean_abs_diff(a, b));
  EXPECT_EQ(r.perceptual, 0.0);
  for (const auto& g : r.grad_anchor.primitives)
    for (int k = 0; k < splat::kParamsPerPrimitive; ++k) EXPECT_EQ(splat::param(g, k), 0.0);
}

TEST(ComputeLoss, NegativeWeightRejected) {
  Rng rng(3);
  auto scene = splat::random_scene(rng, 2, 8);
  Latent a(Shape3{3, 8, 8});
  EXPECT_THROW(compute_loss(a, a, scene.cloud, scene.cloud, -0.1, 0.0), DomainError);
  EXPECT_THROW(compute_loss(a, a, scene.cloud, scene.cloud, 0.0, -1.0), DomainError);
}

// Full loss through the renderer against central differences. The pseudo-GT
// is offset per channel so no residual sits near an L1 kink.
TEST(ComputeLoss, GradientMatchesFiniteDifferences) {
  Rng rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    const auto scene = splat::fd_safe_scene(rng, 4, 16);
    auto cloud0 = scene.cloud;
    for (auto& g : cloud0.primitives)
      for (int k = 0; k < splat::kParamsPerPrimitive; ++k) splat::param(g, k) += rng.uniform(-0.05, 0.05);
    const Latent view = splat::render(scene.cloud, scene.camera, scene.background);
    Latent pgt(view.shape());
    const double offset[3] = {0.3, -0.25, 0.2};
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) pgt.at(c, y, x) = view.at(c, y, x) - offset[c] + rng.uniform(-0.05, 0.05);

    auto loss_of = [&](const splat::GaussianCloud& c) {
      return compute_loss(splat::render(c, scene.camera, scene.background), pgt, c, cloud0, 0.1, 0.5).total;
    };
    const auto terms = compute_loss(view, pgt, scene.cloud, cloud0, 0.1, 0.5);
    auto grad = splat::render_backward(scene.cloud, scene.camera, scene.background, terms.grad_view);
    grad += terms.grad_anchor;

    const double h = 1e-5;
    for (std::size_t i = 0; i < scene.cloud.size(); ++i)
      for (int k = 0; k < splat::kParamsPerPrimitive; ++k) {
        auto plus = scene.cloud, minus = scene.cloud;
        splat::param(plus.primitives[i], k) += h;
        splat::param(minus.primitives[i], k) -= h;
        const double fd = (loss_of(plus) - loss_of(minus)) / (2 * h);
        EXPECT_LE(splat::relative_error(splat::param(grad.primitives[i], k), fd), 1e-3)
            << "primitive " << i << " " << splat::param_name(k);
      }
  }
}

// ---- pseudo-GT formation ----------------------------------------------------

TEST(PseudoGt, IdenticalPromptsReturnRenderedLatentExactly) {
  auto cfg = small_config();
  const auto toy = small_toy(cfg);
  const auto s = toy_session(toy, cfg, /*identical=*/true);
  Rng rng(5);
  for (int t : {49, 30, 10, 1}) {
    const auto pgt = form_pseudo_gts(s, s.z_src0, t, 1, rng);
    for (std::size_t m = 0; m < pgt.size(); ++m) EXPECT_EQ(max_abs_diff(pgt[m], s.z_src0[m]), 0.0);
  }
}

// Zero variance on both conditions: the two eps predictions expand to eps and
// eps + (scale/std)(z_pi - mu), so the pseudo-GT is mu whatever the noise.
TEST(PseudoGt, PointMassTargetGivesReferenceView) {
  auto cfg = small_config();
  const auto toy = small_toy(cfg, 0.0);
  const auto s = toy_session(toy, cfg);
  Rng rng(9);
  for (int t : {48, 25, 3, 1}) {
    const auto pgt = form_pseudo_gts(s, s.z_src0, t, 1, rng);
    for (std::size_t m = 0; m < pgt.size(); ++m) EXPECT_LE(max_abs_diff(pgt[m], toy.reference[m]), 1e-10) << "t=" << t;
  }
}

// Target variance s^2 with a point-mass source:
//   z0 = (1 - p) z_pi + p mu + q eps,
// p = std^2 / v, q = std * scale * s^2 / v, v = abar s^2 + std^2.
TEST(PseudoGt, MatchesSymbolicExpansion) {
  auto cfg = small_config();
  const double s2 = 0.3;
  const auto toy = small_toy(cfg, s2);
  const auto s = toy_session(toy, cfg);
  const auto sched = cfg.schedule();
  Rng perturb(4);
  std::vector<Latent> z_pi;
  for (const auto& z : s.z_src0) z_pi.push_back(z + perturb.uniform_like(z.shape(), -0.1, 0.1));
  for (int t : {44, 20, 2}) {
    Rng rng(123 + t), replay(123 + t);
    const auto pgt = form_pseudo_gts(s, z_pi, t, 1, rng);
    const double a = sched.scale(t), sd = sched.noise_std(t);
    const double v = sched.alpha_bar(t) * s2 + sd * sd;
    const double p = sd * sd / v, q = sd * a * s2 / v;
    for (std::size_t m = 0; m < pgt.size(); ++m) {
      const Latent eps = replay.normal_like(z_pi[m].shape());
      Latent expect(z_pi[m].shape());
      for (std::size_t i = 0; i < expect.size(); ++i) {
        expect[i] = (1 - p) * z_pi[m][i] + p * toy.reference[m][i] + q * eps[i];
      }
      EXPECT_LE(max_abs_diff(pgt[m], expect), 1e-10) << "t=" << t << " camera " << m;
    }
  }
}

TEST(PseudoGt, ZeroMaskKeepsSource) {
  auto cfg = small_config();
  const auto toy = small_toy(cfg);
  auto s = toy_session(toy, cfg);
  for (const auto& z : s.z_src0) s.masks.emplace_back(vcac::BlendMask(Latent(Shape3{1, z.height(), z.width()})));
  Rng rng(1);
  const auto pgt = form_pseudo_gts(s, s.z_src0, 30, 1, rng);
  for (std::size_t m = 0; m < pgt.size(); ++m) EXPECT_EQ(max_abs_diff(pgt[m], s.z_src0[m]), 0.0);
}

TEST(PseudoGt, OneNoiseDrawPerCamera) {
  auto cfg = small_config(5, 2);
  const auto toy = small_toy(cfg);
  const auto r = run_tas(toy_session(toy, cfg));
  EXPECT_EQ(r.noise_draws, 5u * toy.cameras.size());
}

// ---- run_tas -----------------------------------------------------------------

TEST(RunTas, IdenticalPromptsAreAFixedPoint) {
  auto cfg = small_config(8, 5);
  cfg.eta = 1.0;
  const auto toy = small_toy(cfg);
  const auto s = toy_session(toy, cfg, true);
  const auto r = run_tas(s);
  for (std::size_t n = 0; n < r.trajectory.size(); ++n)
    for (std::size_t m = 0; m < s.cameras.size(); ++m) {
      EXPECT_LE(max_abs_diff(r.trajectory[n][m], r.renders[n][m]), 1e-10);
    }
  for (std::size_t m = 0; m < s.cameras.size(); ++m) {
    EXPECT_LE(max_abs_diff(r.final_views[m], r.initial_views[m]), 1e-6);
    for (double d : trajectory_distances(r, m)) EXPECT_LE(d, 1e-6);
  }
}

TEST(RunTas, ZeroStepSizeLeavesCloudUnchanged) {
  auto cfg = small_config(1, 1);
  cfg.eta = 0.0;
  const auto toy = small_toy(cfg);
  const auto r = run_tas(toy_session(toy, cfg));
  ASSERT_EQ(r.cloud.size(), toy.source.size());
  for (std::size_t i = 0; i < r.cloud.size(); ++i)
    for (int k = 0; k < splat::kParamsPerPrimitive; ++k) {
      EXPECT_EQ(splat::param(r.cloud.primitives[i], k), splat::param(toy.source.primitives[i], k));
    }
}

TEST(RunTas, ZeroInnerStepsRejected) {
  auto cfg = small_config(2, 0);
  EXPECT_THROW(cfg.validate(), DomainError);
  const auto toy = small_toy(small_config());
  EXPECT_THROW(run_tas(toy_session(toy, cfg)), DomainError);
}

TEST(RunTas, OuterStepRangeChecked) {
  auto cfg = small_config(3, 1);
  const auto toy = small_toy(cfg);
  const auto s = toy_session(toy, cfg);
  Rng rng(0);
  EXPECT_THROW(tas_outer_step(s, s.source, 0, rng), DomainError);
  EXPECT_THROW(tas_outer_step(s, s.source, 4, rng), DomainError);
}

TEST(RunTas, ProducesOneImagePerStepAndRowPerCamera) {
  auto cfg = small_config(7, 2);
  const auto toy = small_toy(cfg);
  const auto r = run_tas(toy_session(toy, cfg));
  ASSERT_EQ(r.trajectory.size(), 7u);
  for (const auto& step : r.trajectory) EXPECT_EQ(step.size(), toy.cameras.size());
  EXPECT_EQ(r.log.rows.size(), 7u * toy.cameras.size());
  std::istringstream csv(r.log.csv());
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, MetricsLog::kHeader);
}

TEST(RunTas, DeterministicAcrossRunsAndThreads) {
  auto cfg = small_config(4, 3);
  cfg.seed = 77;
  const auto toy = small_toy(cfg);
  const auto a = run_tas(toy_session(toy, cfg, false, ExecPolicy{1}));
  const auto b = run_tas(toy_session(toy, cfg, false, ExecPolicy{1}));
  const auto c = run_tas(toy_session(toy, cfg, false, ExecPolicy{4}));
  EXPECT_EQ(a.log.csv(), b.log.csv());
  EXPECT_EQ(a.log.csv(), c.log.csv());
  for (std::size_t m = 0; m < toy.cameras.size(); ++m) EXPECT_EQ(a.final_views[m].values(), c.final_views[m].values());
}

TEST(RunTas, SeedChangesNoise) {
  auto cfg = small_config(2, 1);
  const auto toy = small_toy(cfg);
  cfg.seed = 1;
  const auto a = run_tas(toy_session(toy, cfg));
  cfg.seed = 2;
  const auto b = run_tas(toy_session(toy, cfg));
  EXPECT_NE(a.log.csv(), b.log.csv());
}

// Soft descent property at the default step size: at most one increase of the
// batch loss per 100 inner steps.
TEST(RunTas, InnerLoopDescendsAtDefaultStep) {
  TasConfig cfg;
  cfg.outer_steps = 10;
  const auto toy = small_toy(cfg);
  const auto r = run_tas(toy_session(toy, cfg));
  const int inner = cfg.outer_steps * cfg.inner_steps;
  EXPECT_LE(r.log.total_inner_increases() / static_cast<int>(toy.cameras.size()), inner / 100);
}

// With equal variance on both conditions the noise cancels and each pseudo-GT
// is a deterministic convex pull toward the target; the rendered path then
// approaches the target views.
TEST(RunTas, RenderedPathApproachesTarget) {
  TasConfig cfg;
  cfg.outer_steps = 12;
  const auto toy = small_toy(cfg, 0.5, 0.5);
  const auto r = run_tas(toy_session(toy, cfg));
  int violations = 0, total = 0;
  for (std::size_t m = 0; m < toy.cameras.size(); ++m) {
    double prev = rms_diff(r.renders[0][m], toy.reference[m]);
    for (std::size_t n = 1; n <= r.renders.size(); ++n) {
      const Latent& z = n < r.renders.size() ? r.renders[n][m] : r.final_views[m];
      const double d = rms_diff(z, toy.reference[m]);
      EXPECT_TRUE(std::isfinite(d));
      violations += d > prev;
      ++total;
      prev = d;
    }
    for (double d : trajectory_distances(r, m)) EXPECT_TRUE(std::isfinite(d));
  }
  EXPECT_LE(violations, total / 20);
}

TEST(RunTas, PartialLogFlushedOnAbort) {
  auto cfg = small_config(5, 1);
  const auto toy = small_toy(cfg);
  auto s = toy_session(toy, cfg);
  s.scorer = std::make_shared<ThrowingScorer>(s.scorer, 3);
  const auto path = scratch("partial") / "metrics.csv";
  try {
    run_tas(s, path);
    FAIL() << "expected failure";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("editing step 3"), std::string::npos) << e.what();
  }
  std::ifstream f(path);
  ASSERT_TRUE(f.good());
  int lines = 0;
  for (std::string line; std::getline(f, line);) ++lines;
  EXPECT_EQ(lines, 1 + 2 * static_cast<int>(toy.cameras.size()));
}

TEST(RunTas, TimestepOverrideValidated) {
  auto cfg = small_config();
  cfg.timesteps = {40, 40, 10};
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg.timesteps = {40, 20, 0};
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg.timesteps = {40, 20, 5};
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.num_outer_steps(), 3);
}

// ---- no-tas ablation ----------------------------------------------------------

TEST(NoTas, IdenticalPromptsLeaveSceneUnchanged) {
  auto cfg = small_config(4, 2);
  const auto toy = small_toy(cfg);
  const auto r = run_no_tas(toy_session(toy, cfg, true));
  EXPECT_EQ(r.trajectory.size(), 4u);
  for (std::size_t m = 0; m < toy.cameras.size(); ++m) {
    EXPECT_LE(max_abs_diff(r.final_views[m], r.initial_views[m]), 1e-6);
  }
}

TEST(NoTas, TrajectoryIsChainedIn2d) {
  auto cfg = small_config(4, 1);
  const auto toy = small_toy(cfg);
  const auto r = run_no_tas(toy_session(toy, cfg));
  for (std::size_t n = 1; n < r.renders.size(); ++n)
    for (std::size_t m = 0; m < toy.cameras.size(); ++m) EXPECT_EQ(r.renders[n][m].values(), r.trajectory[n - 1][m].values());
}

// ---- metrics ------------------------------------------------------------------

TEST(Metrics, PsnrKnownValues) {
  Latent a(Shape3{1, 2, 2}), b(Shape3{1, 2, 2});
  EXPECT_TRUE(std::isinf(psnr(a, b)));
  for (auto& v : b.flat()) v = 0.1;
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-12);
}

TEST(Metrics, DisagreementZeroForUniformViews) {
  auto cfg = small_config();
  const auto toy = small_toy(cfg);
  std::vector<Latent> flat, masks;
  for (const auto& r : toy.reference) {
    Latent f(r.shape());
    for (auto& v : f.flat()) v = 0.4;
    flat.push_back(f);
    Latent m(Shape3{1, r.height(), r.width()});
    for (auto& v : m.flat()) v = 1.0;
    masks.push_back(m);
  }
  EXPECT_EQ(reprojection_disagreement(flat, masks, toy.edited, toy.cameras), 0.0);
}

TEST(Metrics, DisagreementGrowsWithViewNoise) {
  auto cfg = small_config();
  const auto toy = small_toy(cfg);
  const auto masks = toy_edit_masks(toy);
  const double base = reprojection_disagreement(toy.reference, masks, toy.edited, toy.cameras);
  auto noisy = toy.reference;
  Rng rng(3);
  noisy[1] = noisy[1] + rng.uniform_like(noisy[1].shape(), -0.3, 0.3);
  EXPECT_GT(reprojection_disagreement(noisy, masks, toy.edited, toy.cameras), base);
}

// ---- tiny-denoiser scorer -------------------------------------------------------

TEST(TinyScorer, IdenticalBranchesAgree) {
  auto model = std::make_shared<vcac::TinyDenoiser>();
  Rng rng(8);
  std::vector<Latent> frames;
  std::vector<vcac::Direction> dirs;
  for (int i = 0; i < 4; ++i) {
    frames.push_back(rng.uniform_like(Shape3{3, 16, 16}, 0.0, 1.0));
    dirs.push_back({std::cos(0.2 * i), 0.0, std::sin(0.2 * i)});
  }
  vcac::VcacHooks hooks;
  hooks.query_injection = true;
  hooks.t_q = 3;
  hooks.kv = vcac::KvMode::Auto;
  hooks.partition = vcac::partition_contexts(4, 2, dirs, 25.0);
  Condition y{"a", {1, 2, 3}, std::nullopt};
  TinyEditScorer with(model, hooks, true), without(model, hooks, false);
  const auto b = with.branch_eps(frames, frames, 20, 1, y, y);
  for (std::size_t m = 0; m < frames.size(); ++m) EXPECT_LE(max_abs_diff(b.src[m], b.tgt[m]), 1e-12);
  const auto plain = without.branch_eps(frames, frames, 20, 1, y, y);
  for (std::size_t m = 0; m < frames.size(); ++m) EXPECT_LE(max_abs_diff(plain.src[m], plain.tgt[m]), 1e-12);
}
