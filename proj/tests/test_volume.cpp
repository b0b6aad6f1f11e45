#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gvfit/camera.hpp"
#include "gvfit/error.hpp"
#include "gvfit/volume.hpp"
#include "support.hpp"

namespace gvfit {
namespace {

TEST(GridPosition, Corners) {
  GaussianVolume vol(32, Bounds{});
  EXPECT_EQ(grid_position(0, vol), Vec3(-1, -1, -1));
  EXPECT_EQ(grid_position(vol.size() - 1, vol), Vec3(1, 1, 1));
}

TEST(GridPosition, UnitSpacingAtN3) {
  GaussianVolume vol(3, Bounds{});
  const std::size_t idx = grid_index({1, 0, 0}, 3);
  EXPECT_EQ(idx, 9u);
  EXPECT_EQ(grid_position(idx, vol), Vec3(0, -1, -1));
}

TEST(GridPosition, MatchesCoordinateLoop) {
  const std::size_t n = 5;
  GaussianVolume vol(n, Bounds{Vec3(-2, 0, 1), Vec3(2, 1, 3)});
  std::size_t i = 0;
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t z = 0; z < n; ++z, ++i) {
        const Vec3 want(-2 + 4.0 * x / (n - 1), 0 + 1.0 * y / (n - 1), 1 + 2.0 * z / (n - 1));
        EXPECT_NEAR((grid_position(i, vol) - want).norm(), 0.0, 1e-12);
        EXPECT_EQ(grid_coord(i, n), (GridCoord{x, y, z}));
      }
    }
  }
}

TEST(GridPosition, LexicographicOrder) {
  const std::size_t n = 4;
  for (std::size_t i = 1; i < n * n * n; ++i) EXPECT_LT(grid_coord(i - 1, n), grid_coord(i, n));
}

TEST(GridPosition, OutOfRange) {
  GaussianVolume vol(4, Bounds{});
  EXPECT_THROW(grid_position(64, vol), RangeError);
  EXPECT_THROW(grid_coord(64, 4), RangeError);
}

TEST(GaussianCenter, Examples) {
  GaussianAttributes a;
  EXPECT_EQ(gaussian_center(a, Vec3(0.5, 0, 0)), Vec3(0.5, 0, 0));
  a.offset = Vec3f(0.01f, -0.02f, 0.0f);
  const Vec3 mu = gaussian_center(a, Vec3::Zero());
  EXPECT_EQ(mu, a.offset.cast<double>());
}

TEST(GaussianCenter, DifferenceIsOffsetExactly) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 1000; ++t) {
    GaussianAttributes a;
    a.offset = Vec3f(static_cast<float>(u(rng) * 0.1), static_cast<float>(u(rng) * 0.1),
                     static_cast<float>(u(rng) * 0.1));
    // Lattice-like positions (dyadic) make p + offset - p exact.
    const Vec3 p(std::round(u(rng) * 8) / 8, std::round(u(rng) * 8) / 8, std::round(u(rng) * 8) / 8);
    EXPECT_EQ(gaussian_center(a, p) - p, a.offset.cast<double>());
  }
}

TEST(Activate, Examples) {
  GaussianAttributes a;
  a.log_scale.setZero();
  a.opacity_logit = 0.0f;
  a.rotation = Vec4f(2, 0, 0, 0);
  a.color = Vec3f(0.1f, 0.2f, 0.3f);
  const ActivatedGaussian g = activate(a);
  EXPECT_EQ(g.scale, Vec3(1, 1, 1));
  EXPECT_EQ(g.opacity, 0.5);
  EXPECT_EQ(g.rotation, Quat(1, 0, 0, 0));
  EXPECT_EQ(g.color, a.color.cast<double>());
}

TEST(Activate, ZeroQuaternionThrows) {
  GaussianAttributes a;
  a.rotation.setZero();
  EXPECT_THROW(activate(a), DegenerateRotation);
}

TEST(Activate, RangesForExtremeInputs) {
  for (float l : {-80.0f, -10.0f, 0.0f, 10.0f, 15.0f}) {
    GaussianAttributes a;
    a.opacity_logit = l;
    a.log_scale = Vec3f::Constant(l * 0.5f);
    const ActivatedGaussian g = activate(a);
    EXPECT_GT(g.opacity, 0.0);
    EXPECT_LT(g.opacity, 1.0);
    EXPECT_TRUE((g.scale.array() > 0).all());
  }
}

TEST(Attributes, ChannelRoundTrip) {
  std::mt19937_64 rng(1);
  const GaussianVolume vol = test::random_volume(3, rng);
  for (const GaussianAttributes& a : vol.attributes()) {
    EXPECT_EQ(GaussianAttributes::from_channels(a.to_channels()), a);
  }
  const Channels c = vol.at(0).to_channels();
  EXPECT_EQ(c[channel::kOpacity], vol.at(0).opacity_logit);
  EXPECT_EQ(c[channel::kColor + 2], vol.at(0).color[2]);
  EXPECT_EQ(c[channel::kRotation], vol.at(0).rotation[0]);
}

TEST(Volume, RejectsResolutionBelowTwo) {
  EXPECT_THROW(GaussianVolume(1, Bounds{}), ConfigError);
}

TEST(Camera, ValidateRejectsBadIntrinsics) {
  Camera c = look_at(Vec3(0, -3, 0), Vec3::Zero(), 32, 32, 1.0);
  EXPECT_NO_THROW(c.validate());
  Camera bad = c;
  bad.fx = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.cx = 32;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.rotation(0, 0) += 1e-3;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Camera, LookAtPutsTargetOnAxis) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  for (int t = 0; t < 50; ++t) {
    const Vec3 eye(n(rng) * 3, n(rng) * 3, n(rng) * 3);
    const Camera c = look_at(eye, Vec3::Zero(), 64, 48, 0.9);
    const Vec3 o = c.to_camera(Vec3::Zero());
    EXPECT_NEAR(o.x(), 0.0, 1e-9);
    EXPECT_NEAR(o.y(), 0.0, 1e-9);
    EXPECT_NEAR(o.z(), eye.norm(), 1e-9);
    EXPECT_NEAR((c.position() - eye).norm(), 0.0, 1e-9);
  }
}

TEST(Camera, LookAtKeepsWorldUpAtImageTop) {
  const Camera c = look_at(Vec3(3, 0, 0), Vec3::Zero(), 32, 32, 1.0);
  // A point above the origin (world +z) lands in the upper half (smaller v).
  const Vec3 up = c.to_camera(Vec3(0, 0, 0.5));
  EXPECT_LT(up.y(), 0.0);
  EXPECT_NO_THROW(look_at(Vec3(0, 0, 3), Vec3::Zero(), 32, 32, 1.0).validate());
}

TEST(Camera, CameraToWorldRoundTrip) {
  const Camera c = look_at(Vec3(1, 2, 3), Vec3(0.1, 0, 0), 40, 30, 0.8);
  const Camera d =
      Camera::from_camera_to_world(c.camera_to_world(), c.width, c.height, c.fx, c.fy, c.cx, c.cy);
  EXPECT_NEAR((c.rotation - d.rotation).norm(), 0.0, 1e-12);
  EXPECT_NEAR((c.translation - d.translation).norm(), 0.0, 1e-12);
}

}  // namespace
}  // namespace gvfit
