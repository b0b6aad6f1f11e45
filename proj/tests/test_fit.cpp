#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "gvfit/error.hpp"
#include "gvfit/fit.hpp"
#include "gvfit/scene.hpp"
#include "support.hpp"

namespace gvfit {
namespace {

GradientBuffer zero_grads(const GaussianVolume& vol) { return GradientBuffer(vol.size()); }

TEST(FitConfig, DefaultsValidate) {
  FitConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.resolved_refine_end(), 2400);
  EXPECT_NEAR(cfg.resolved_eps_pool(), 2.0 * 2.0 / 31.0, 1e-15);
}

TEST(FitConfig, RejectsBadSchedule) {
  FitConfig cfg;
  cfg.refine_start = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = FitConfig{};
  cfg.refine_end = 3001;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = FitConfig{};
  cfg.lr.color = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = FitConfig{};
  cfg.densify_grad = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = FitConfig{};
  cfg.lr_final_scale = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.lr_final_scale = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = FitConfig{};
  cfg.densify_grad = std::numeric_limits<double>::infinity();
  cfg.prune_opacity = 0.0;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Initialize, EightCorners) {
  auto [vol, pool] = initialize(2);
  EXPECT_EQ(vol.size(), 8u);
  EXPECT_EQ(vol.active_count(), 8u);
  EXPECT_TRUE(pool.empty());
  for (std::size_t i = 0; i < vol.size(); ++i) {
    const Vec3 p = grid_position(i, vol);
    EXPECT_EQ(p.cwiseAbs(), Vec3(1, 1, 1));
    EXPECT_EQ(gaussian_center(vol, i), p);
  }
}

TEST(Initialize, Attributes) {
  auto [vol, pool] = initialize(32);
  EXPECT_EQ(vol.size(), 32768u);
  const ActivatedGaussian g = activate(vol.at(12345));
  EXPECT_NEAR(g.opacity, 0.1, 1e-6);
  EXPECT_NEAR(g.scale.x(), 0.5 * 2.0 / 31.0, 1e-6);
  EXPECT_EQ(g.rotation, Quat(1, 0, 0, 0));
  EXPECT_EQ(g.color, Vec3(0.5, 0.5, 0.5));
  EXPECT_THROW(initialize(1), ConfigError);
}

TEST(Adam, FirstStepIsMinusLrSign) {
  auto [vol, pool] = initialize(2);
  const GaussianVolume before = vol;
  GradientBuffer g = zero_grads(vol);
  FitConfig cfg;
  g.grads[3][channel::kColor] = 0.37;
  g.grads[3][channel::kOpacity] = -2e-4;
  g.grads[5][channel::kOffset + 1] = 1e3;
  AdamState st(vol.size());
  adam_step(vol, g, st, cfg);
  EXPECT_EQ(st.step, 1);
  EXPECT_NEAR(vol.at(3).color[0] - before.at(3).color[0], -cfg.lr.color, 1e-7);
  EXPECT_NEAR(vol.at(3).opacity_logit - before.at(3).opacity_logit, cfg.lr.opacity, 1e-7);
  EXPECT_NEAR(vol.at(5).offset[1] - before.at(5).offset[1], -cfg.lr.offset, 1e-9);
  // The update itself, before float storage, is exact to 1e-9.
  const double m = (1 - cfg.beta1) * 0.37, v = (1 - cfg.beta2) * 0.37 * 0.37;
  const double step = cfg.lr.color * (m / (1 - cfg.beta1)) / (std::sqrt(v / (1 - cfg.beta2)) + cfg.adam_eps);
  EXPECT_NEAR(step, cfg.lr.color, 1e-9);
}

TEST(Adam, ZeroGradientsLeaveStateUnchanged) {
  std::mt19937_64 rng(1);
  GaussianVolume vol = test::random_volume(3, rng);
  const GaussianVolume before = vol;
  AdamState st(vol.size());
  adam_step(vol, zero_grads(vol), st, FitConfig{});
  EXPECT_EQ(vol, before);
  for (std::size_t i = 0; i < vol.size(); ++i) {
    for (std::size_t k = 0; k < kChannels; ++k) {
      EXPECT_EQ(st.m[i][k], 0.0);
      EXPECT_EQ(st.v[i][k], 0.0);
    }
  }
}

TEST(Adam, OffsetsFrozenWhenDisabled) {
  auto [vol, pool] = initialize(2);
  GradientBuffer g = zero_grads(vol);
  g.grads[0][channel::kOffset] = 1.0;
  g.grads[0][channel::kColor] = 1.0;
  AdamState st(vol.size());
  adam_step(vol, g, st, FitConfig{}, false);
  EXPECT_EQ(vol.at(0).offset, Vec3f::Zero());
  EXPECT_NE(vol.at(0).color[0], 0.5f);
}

TEST(Adam, Errors) {
  auto [vol, pool] = initialize(2);
  AdamState st(vol.size());
  GradientBuffer g = zero_grads(vol);
  g.grads[2][channel::kRotation + 1] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(vol, g, st, FitConfig{});
    FAIL() << "expected OptimizerError";
  } catch (const OptimizerError& e) {
    EXPECT_NE(std::string(e.what()).find("rotation"), std::string::npos);
  }
  EXPECT_EQ(st.step, 0);

  g = zero_grads(vol);
  vol.set_active(4, false);
  g.grads[4][channel::kColor] = 1.0;
  EXPECT_THROW(adam_step(vol, g, st, FitConfig{}), ContractError);
  EXPECT_THROW(adam_step(vol, GradientBuffer(3), st, FitConfig{}), ShapeError);
}

TEST(Adam, InactivePointsUnchanged) {
  std::mt19937_64 rng(2);
  GaussianVolume vol = test::random_volume(3, rng, 0.5);
  const GaussianVolume before = vol;
  GradientBuffer g = zero_grads(vol);
  std::normal_distribution<double> n(0, 1);
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (!vol.active(i)) continue;
    for (double& x : g.grads[i]) x = n(rng);
  }
  AdamState st(vol.size());
  for (int s = 0; s < 3; ++s) adam_step(vol, g, st, FitConfig{});
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (!vol.active(i)) EXPECT_EQ(vol.at(i), before.at(i));
    for (std::size_t k = 0; k < kChannels; ++k) {
      EXPECT_TRUE(std::isfinite(st.m[i][k]) && std::isfinite(st.v[i][k]));
    }
  }
}

TEST(PruneSelect, Examples) {
  auto [vol, pool] = initialize(3);
  for (auto& a : vol.attributes()) a.opacity_logit = static_cast<float>(logit(0.9));
  EXPECT_TRUE(prune_select(vol, 0.01).empty());
  vol.at(7).opacity_logit = static_cast<float>(logit(0.001));
  EXPECT_EQ(prune_select(vol, 0.01), std::vector<std::size_t>{7});
  vol.set_active(7, false);
  EXPECT_TRUE(prune_select(vol, 0.01).empty());
}

TEST(PruneSelect, MatchesFilter) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    const GaussianVolume vol = test::random_volume(5, rng, 0.7);
    const double tau = 0.05 + 0.1 * t;
    std::vector<std::size_t> want;
    for (std::size_t i = 0; i < vol.size(); ++i) {
      const double o = 1.0 / (1.0 + std::exp(-double(vol.at(i).opacity_logit)));
      if (vol.active(i) && o < tau) want.push_back(i);
    }
    EXPECT_EQ(prune_select(vol, tau), want);
  }
}

TEST(DensifySelect, Examples) {
  auto [vol, pool] = initialize(3);
  GradientBuffer h = zero_grads(vol);
  EXPECT_TRUE(densify_select(vol, h, 1e-3).empty());
  h.viewspace_grad_norm[11] = 10 * 1e-3;
  h.visible_count[11] = 1;
  EXPECT_EQ(densify_select(vol, h, 1e-3), std::vector<std::size_t>{11});
  EXPECT_THROW(densify_select(vol, GradientBuffer(2), 1e-3), ShapeError);
}

TEST(DensifySelect, MatchesFilter) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> views(0, 4);
  for (int t = 0; t < 10; ++t) {
    const GaussianVolume vol = test::random_volume(5, rng, 0.7);
    GradientBuffer h = zero_grads(vol);
    for (std::size_t i = 0; i < vol.size(); ++i) {
      h.visible_count[i] = static_cast<std::uint32_t>(views(rng));
      h.viewspace_grad_norm[i] = h.visible_count[i] * u(rng);
    }
    const double tau = 0.1 * t;
    std::vector<std::size_t> want;
    for (std::size_t i = 0; i < vol.size(); ++i) {
      if (vol.active(i) && h.visible_count[i] > 0 &&
          h.viewspace_grad_norm[i] / h.visible_count[i] > tau) {
        want.push_back(i);
      }
    }
    EXPECT_EQ(densify_select(vol, h, tau), want);
  }
}

TEST(PoolExchange, EmptySetsChangeNothing) {
  std::mt19937_64 rng(5);
  GaussianVolume vol = test::random_volume(4, rng, 0.6);
  const GaussianVolume before = vol;
  CandidatePool pool;
  const ExchangeReport r = pool_exchange(vol, pool, {}, {}, 0.1, 1.0, rng);
  EXPECT_EQ(vol, before);
  EXPECT_TRUE(pool.empty());
  EXPECT_TRUE(r.pruned.empty() && r.cloned.empty());
}

TEST(PoolExchange, PruneFive) {
  auto [vol, pool] = initialize(4);
  std::mt19937_64 rng(6);
  const std::vector<std::size_t> gp{1, 9, 20, 33, 63};
  pool_exchange(vol, pool, gp, {}, 0.1, 1.0, rng);
  EXPECT_EQ(vol.active_count(), 64u - 5u);
  EXPECT_EQ(pool.size(), 5u);
  for (std::size_t i : gp) EXPECT_TRUE(pool.contains(i) && !vol.active(i));
}

TEST(PoolExchange, SingleCloneLandsNearItsGridPoint) {
  auto [vol, pool] = initialize(5);
  std::mt19937_64 rng(7);
  const std::size_t d = grid_index({2, 2, 2}, 5);
  const std::size_t nb = grid_index({2, 3, 2}, 5);
  pool_exchange(vol, pool, {nb}, {}, 0.1, 1.0, rng);
  vol.at(d).offset = Vec3f(0.0f, 0.2f, 0.0f);
  vol.at(d).color = Vec3f(0.1f, 0.7f, 0.3f);
  const double eps_offsets = 0.25;
  const ExchangeReport r = pool_exchange(vol, pool, {}, {d}, eps_offsets, 1.0, rng);
  ASSERT_EQ(r.cloned.size(), 1u);
  EXPECT_EQ(r.cloned[0], std::make_pair(d, nb));
  EXPECT_TRUE(pool.empty());
  EXPECT_EQ(vol.active_count(), vol.size());
  const Vec3 off = gaussian_center(vol, nb) - grid_position(nb, vol);
  EXPECT_LE(off.cwiseAbs().maxCoeff(), eps_offsets + 1e-7);
  EXPECT_NEAR(activate(vol.at(d)).opacity, 0.05, 1e-6);
  EXPECT_EQ(vol.at(nb).opacity_logit, vol.at(d).opacity_logit);
  EXPECT_EQ(vol.at(nb).color, vol.at(d).color);
  EXPECT_EQ(vol.at(nb).log_scale, vol.at(d).log_scale);
}

TEST(PoolExchange, PicksNearestPooledPointAndSkipsOutOfRange) {
  auto [vol, pool] = initialize(5);
  std::mt19937_64 rng(8);
  const std::size_t d = grid_index({0, 0, 0}, 5);
  const std::size_t near = grid_index({1, 0, 0}, 5);
  const std::size_t far = grid_index({4, 4, 4}, 5);
  pool_exchange(vol, pool, {near, far}, {}, 0.1, 0.6, rng);
  ExchangeReport r = pool_exchange(vol, pool, {}, {d}, 0.1, 0.6, rng);
  EXPECT_EQ(r.cloned.at(0).second, near);
  EXPECT_TRUE(pool.contains(far));
  // Only `far` remains pooled and it is out of reach.
  r = pool_exchange(vol, pool, {}, {d}, 0.1, 0.6, rng);
  EXPECT_TRUE(r.cloned.empty());
  EXPECT_EQ(r.skipped, 1u);
}

TEST(PoolExchange, Contracts) {
  auto [vol, pool] = initialize(3);
  std::mt19937_64 rng(9);
  EXPECT_THROW(pool_exchange(vol, pool, {4}, {4}, 0.1, 1.0, rng), ContractError);
  vol.set_active(2, false);
  EXPECT_THROW(pool_exchange(vol, pool, {2}, {}, 0.1, 1.0, rng), ContractError);
  EXPECT_THROW(pool_exchange(vol, pool, {}, {2}, 0.1, 1.0, rng), ContractError);
}

TEST(ReleasePool, Examples) {
  auto [vol, pool] = initialize(4);
  const GaussianVolume before = vol;
  EXPECT_TRUE(release_pool(vol, pool).empty());
  EXPECT_EQ(vol, before);

  std::mt19937_64 rng(10);
  for (std::size_t i : {3u, 17u, 40u}) vol.at(i).offset = Vec3f(0.1f, 0.1f, -0.1f);
  pool_exchange(vol, pool, {3, 17, 40}, {}, 0.1, 1.0, rng);
  const std::vector<std::size_t> released = release_pool(vol, pool);
  EXPECT_EQ(released, (std::vector<std::size_t>{3, 17, 40}));
  EXPECT_TRUE(pool.empty());
  EXPECT_EQ(vol.active_count(), vol.size());
  for (std::size_t i : released) {
    EXPECT_EQ(vol.at(i).offset, Vec3f::Zero());
    EXPECT_NEAR(activate(vol.at(i)).opacity, 0.01, 1e-7);
    EXPECT_EQ(vol.at(i).log_scale, before.at(i).log_scale);
  }
  EXPECT_EQ(offsets_reg(vol, 0.01), 0.0);
}

struct SmallScene {
  PosedImageSet train, test;
};

SmallScene one_gaussian_scene() {
  SceneSpec spec;
  spec.seed = 3;
  spec.gaussian_count = 1;
  spec.placement = Placement::kRandomInSphere;
  spec.sphere_radius = 0.3;
  spec.scale_range = {0.15, 0.25};
  const GaussianVolume scene = make_scene(spec);
  DatasetSpec train;
  train.view_count = 36;
  train.image_size = 48;
  DatasetSpec test = train;
  test.view_count = 12;
  test.radius = 1.6;
  test.azimuth_shift = 0.5;
  return {render_dataset(scene, train), render_dataset(scene, test)};
}

FitConfig small_config(int iters) {
  FitConfig cfg;
  cfg.resolution = 8;
  cfg.total_iters = iters;
  cfg.refine_start = 100;
  cfg.seed = 11;
  return cfg;
}

TEST(Fit, ZeroIterationsReturnsInitialization) {
  const SmallScene s = one_gaussian_scene();
  const FitResult r = fit(s.train, small_config(0));
  EXPECT_EQ(r.volume, initialize(8).first);
  EXPECT_TRUE(r.log.empty());
}

TEST(Fit, RejectsEmptyDataset) {
  EXPECT_THROW(fit(PosedImageSet{}, small_config(10)), ConfigError);
}

TEST(Fit, OneGaussianClosedLoop) {
  const SmallScene s = one_gaussian_scene();
  std::size_t refinements = 0;
  const FitResult r = fit(s.train, small_config(500), [&](const FitEvent& e) {
    EXPECT_EQ(e.volume.active_count() + e.pool.size(), e.volume.size());
    refinements += e.kind == FitEventKind::kRefinement;
  });
  EXPECT_EQ(refinements, 3u);
  EXPECT_EQ(r.volume.active_count(), r.volume.size());
  EXPECT_TRUE(r.pool.empty());
  ASSERT_EQ(r.log.size(), 500u);
  EXPECT_EQ(r.log.back().iteration, 499);
  const EvalResult e = evaluate(r.volume, s.test);
  EXPECT_GT(e.psnr, 30.0);
  EXPECT_EQ(e.per_view.size(), 12u);
}

TEST(Fit, SameSeedSameLog) {
  const SmallScene s = one_gaussian_scene();
  FitConfig cfg = small_config(250);
  const FitResult a = fit(s.train, cfg);
  const FitResult b = fit(s.train, cfg);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].loss, b.log[i].loss);
    EXPECT_EQ(a.log[i].active_count, b.log[i].active_count);
  }
  EXPECT_EQ(a.volume, b.volume);
}

TEST(Fit, NoOffsetsKeepsCentersOnGrid) {
  const SmallScene s = one_gaussian_scene();
  FitConfig cfg = small_config(150);
  cfg.optimize_offsets = false;
  const FitResult r = fit(s.train, cfg);
  for (const GaussianAttributes& a : r.volume.attributes()) EXPECT_EQ(a.offset, Vec3f::Zero());
}

TEST(Fit, DisabledRefinementKeepsEveryPointActive) {
  const SmallScene s = one_gaussian_scene();
  FitConfig cfg = small_config(150);
  cfg.prune_opacity = 0.0;
  cfg.densify_grad = std::numeric_limits<double>::infinity();
  const FitResult r = fit(s.train, cfg, [](const FitEvent& e) {
    EXPECT_EQ(e.volume.active_count(), e.volume.size());
    if (e.exchange) EXPECT_TRUE(e.exchange->pruned.empty() && e.exchange->cloned.empty());
  });
  for (const MetricsRow& row : r.log) EXPECT_EQ(row.active_count, 512u);
}

}  // namespace
}  // namespace gvfit
