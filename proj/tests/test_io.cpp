#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "gvfit/error.hpp"
#include "gvfit/io.hpp"
#include "ply_reader.hpp"
#include "support.hpp"

namespace gvfit {
namespace {

TEST(VolumeFile, RoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  const test::TempDir dir("vol");
  for (std::size_t n : {2u, 5u, 9u}) {
    const GaussianVolume vol =
        test::random_volume(n, rng, 0.6, Bounds{Vec3(-0.5, -2, 0.25), Vec3(1.5, 2, 0.75)});
    save_volume(vol, dir / "v.gvol");
    const GaussianVolume back = load_volume(dir / "v.gvol");
    EXPECT_EQ(back, vol);
    EXPECT_EQ(std::memcmp(back.attributes().data(), vol.attributes().data(),
                          vol.size() * sizeof(GaussianAttributes)),
              0);
  }
}

TEST(VolumeFile, SizeAtN32) {
  const GaussianVolume vol(32, Bounds{});
  const std::vector<std::uint8_t> bytes = encode_volume(vol);
  EXPECT_EQ(bytes.size(), kVolumeHeaderBytes + 32768u * 14u * 4u + 32768u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "GVOL");
}

TEST(VolumeFile, TruncationFailsClosed) {
  std::mt19937_64 rng(2);
  const std::vector<std::uint8_t> bytes = encode_volume(test::random_volume(3, rng));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{20}, kVolumeHeaderBytes,
                          bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + cut);
    EXPECT_THROW(decode_volume(part), TruncatedError) << cut;
  }
  std::vector<std::uint8_t> extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_volume(extra), FormatError);
}

TEST(VolumeFile, HeaderErrors) {
  std::vector<std::uint8_t> bytes = encode_volume(GaussianVolume(2, Bounds{}));
  std::vector<std::uint8_t> bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_volume(bad), BadMagicError);
  bad = bytes;
  bad[4] = 7;
  EXPECT_THROW(decode_volume(bad), VersionMismatchError);
  bad = bytes;
  bad.back() = 2;
  EXPECT_THROW(decode_volume(bad), FormatError);
  EXPECT_THROW(decode_gdf(bytes), BadMagicError);
  EXPECT_THROW(load_volume("/nonexistent/gvfit/file.gvol"), IoError);
}

TEST(GdfFile, RoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 2.0f);
  GDFVolume g{6, Bounds{Vec3(0, 0, 0), Vec3(1, 2, 3)}, std::vector<float>(216)};
  for (float& v : g.values) v = u(rng);
  const test::TempDir dir("gdf");
  save_gdf(g, dir / "f.ggdf");
  EXPECT_EQ(load_gdf(dir / "f.ggdf"), g);
  const std::vector<std::uint8_t> bytes = encode_gdf(g);
  EXPECT_EQ(bytes.size(), kVolumeHeaderBytes + 216u * 4u);
  EXPECT_THROW(decode_gdf({bytes.begin(), bytes.end() - 2}), TruncatedError);
}

TEST(Ply, LayoutAndValues) {
  std::mt19937_64 rng(4);
  const GaussianVolume vol = test::random_volume(4, rng, 0.7);
  const double floor = 0.3;
  const test::TempDir dir("ply");
  export_ply(vol, dir / "s.ply", floor);
  const test::PlyCloud cloud = test::read_splat_ply(read_file(dir / "s.ply"));
  EXPECT_EQ(cloud.properties, test::splat_layout());

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < vol.size(); ++i) {
    const double o = 1.0 / (1.0 + std::exp(-double(vol.at(i).opacity_logit)));
    if (vol.active(i) && o >= floor) keep.push_back(i);
  }
  ASSERT_EQ(cloud.count, keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const GaussianAttributes& a = vol.at(keep[r]);
    const Vec3 mu = gaussian_center(vol, keep[r]);
    EXPECT_FLOAT_EQ(cloud.at(r, "x"), static_cast<float>(mu.x()));
    EXPECT_FLOAT_EQ(cloud.at(r, "z"), static_cast<float>(mu.z()));
    EXPECT_FLOAT_EQ(cloud.at(r, "opacity"), a.opacity_logit);
    EXPECT_FLOAT_EQ(cloud.at(r, "scale_1"), a.log_scale[1]);
    EXPECT_FLOAT_EQ(cloud.at(r, "rot_0"), a.rotation[0]);
    EXPECT_NEAR(0.5 + kShC0 * cloud.at(r, "f_dc_2"), a.color[2], 1e-6);
  }
}

TEST(Ply, EmptyAndSingle) {
  const test::TempDir dir("ply1");
  GaussianVolume vol(3, Bounds{});
  for (auto& a : vol.attributes()) a.opacity_logit = -8.0f;
  export_ply(vol, dir / "e.ply", 0.01);
  EXPECT_EQ(test::read_splat_ply(read_file(dir / "e.ply")).count, 0u);

  vol.at(13).opacity_logit = 1.0f;
  vol.at(13).offset = Vec3f(0.1f, -0.2f, 0.05f);
  export_ply(vol, dir / "one.ply", 0.01);
  const test::PlyCloud c = test::read_splat_ply(read_file(dir / "one.ply"));
  ASSERT_EQ(c.count, 1u);
  const Vec3 mu = gaussian_center(vol, 13);
  EXPECT_EQ(c.at(0, "x"), static_cast<float>(mu.x()));
  EXPECT_EQ(c.at(0, "y"), static_cast<float>(mu.y()));
  EXPECT_EQ(c.at(0, "z"), static_cast<float>(mu.z()));
}

TEST(Manifest, FocalFromAngle) {
  const test::TempDir dir("fx");
  ImageBuffer img(800, 2, Vec3(0.5, 0.5, 0.5));
  save_png(dir / "a.png", img);
  std::ofstream(dir / "transforms.json")
      << R"({"camera_angle_x": 1.5707963267948966, "frames": [
            {"file_path": "./a", "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,3],[0,0,0,1]]}]})";
  const PosedImageSet set = load_dataset(dir.path());
  ASSERT_EQ(set.views.size(), 1u);
  EXPECT_NEAR(set.views[0].camera.fx, 400.0, 1e-9);
  EXPECT_EQ(set.views[0].camera.cx, 400.0);
  // NeRF cameras look down -z: the origin is straight ahead.
  const Vec3 o = set.views[0].camera.to_camera(Vec3::Zero());
  EXPECT_NEAR(o.z(), 3.0, 1e-12);
}

TEST(Manifest, Errors) {
  const test::TempDir dir("bad");
  std::ofstream(dir / "empty.json") << R"({"camera_angle_x": 0.7, "frames": []})";
  EXPECT_THROW(load_manifest(dir / "empty.json"), ConfigError);
  std::ofstream(dir / "noangle.json") << R"({"frames": []})";
  try {
    load_manifest(dir / "noangle.json");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("camera_angle_x"), std::string::npos);
  }
  std::ofstream(dir / "skew.json")
      << R"({"camera_angle_x": 0.7, "frames": [
            {"file_path": "a", "transform_matrix": [[2,0,0,0],[0,1,0,0],[0,0,1,3],[0,0,0,1]]}]})";
  EXPECT_THROW(load_manifest(dir / "skew.json"), ParseError);
  std::ofstream(dir / "broken.json") << "{";
  EXPECT_THROW(load_manifest(dir / "broken.json"), ParseError);
  std::ofstream(dir / "missing.json")
      << R"({"camera_angle_x": 0.7, "frames": [
            {"file_path": "nope", "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,3],[0,0,0,1]]}]})";
  EXPECT_THROW(load_dataset(dir / "missing.json"), ParseError);
}

TEST(Manifest, DatasetRoundTrip) {
  SceneSpec spec;
  spec.gaussian_count = 40;
  DatasetSpec ds;
  ds.view_count = 6;
  ds.image_size = 20;
  ds.background = Vec3(0.0, 0.0, 0.0);
  const PosedImageSet set = render_dataset(make_scene(spec), ds);
  const test::TempDir dir("ds");
  save_dataset(set, dir.path());
  const PosedImageSet back = load_dataset(dir.path());
  ASSERT_EQ(back.views.size(), set.views.size());
  EXPECT_EQ(back.background, set.background);
  for (std::size_t i = 0; i < set.views.size(); ++i) {
    const Camera& a = set.views[i].camera;
    const Camera& b = back.views[i].camera;
    EXPECT_LT((a.camera_to_world() - b.camera_to_world()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_NEAR(a.fx, b.fx, 1e-6);
    EXPECT_EQ(a.cx, b.cx);
    for (std::size_t k = 0; k < set.views[i].image.rgb.size(); ++k) {
      EXPECT_NEAR(set.views[i].image.rgb[k], back.views[i].image.rgb[k], 0.01);
    }
  }
}

TEST(Png, SrgbRoundTrip) {
  for (int i = 0; i <= 255; ++i) {
    const double c = i / 255.0;
    EXPECT_NEAR(linear_to_srgb(srgb_to_linear(c)), c, 1e-12);
  }
  EXPECT_EQ(srgb_to_linear(0.0), 0.0);
  EXPECT_NEAR(srgb_to_linear(1.0), 1.0, 1e-15);
  std::mt19937_64 rng(5);
  const ImageBuffer img = test::random_image(13, 7, rng);
  const test::TempDir dir("png");
  save_png(dir / "x.png", img);
  const ImageBuffer back = load_png(dir / "x.png");
  ASSERT_EQ(back.width, 13);
  ASSERT_EQ(back.height, 7);
  for (std::size_t k = 0; k < img.rgb.size(); ++k) {
    // One 8-bit sRGB step is at most ~0.013 in linear terms near white.
    EXPECT_NEAR(back.rgb[k], img.rgb[k], 0.014);
  }
}

TEST(FitConfigJson, RoundTrip) {
  FitConfig cfg;
  cfg.resolution = 12;
  cfg.total_iters = 777;
  cfg.refine_end = 500;
  cfg.densify_grad = std::numeric_limits<double>::infinity();
  cfg.prune_opacity = 0.0;
  cfg.eps_pool = 0.3;
  cfg.lr.color = 0.02;
  cfg.lr_final_scale = 0.25;
  cfg.optimize_offsets = false;
  cfg.seed = 99;
  const FitConfig back = fit_config_from_json(fit_config_to_json(cfg));
  EXPECT_EQ(fit_config_to_json(back), fit_config_to_json(cfg));
  EXPECT_TRUE(std::isinf(back.densify_grad));
  EXPECT_EQ(back.refine_end, 500);
  EXPECT_EQ(back.eps_pool, 0.3);
  EXPECT_EQ(back.lr_final_scale, 0.25);
  EXPECT_FALSE(back.eps_offsets.has_value());
}

TEST(FitConfigJson, Errors) {
  EXPECT_THROW(fit_config_from_json(R"({"resolution": 8, "colour": 1})"), ParseError);
  EXPECT_THROW(fit_config_from_json(R"({"resolution": "big"})"), ParseError);
  EXPECT_THROW(fit_config_from_json(R"({"total_iters": 100, "refine_start": 500})"), ConfigError);
  EXPECT_EQ(fit_config_from_json(R"({"resolution": 8})").resolution, 8u);
}

TEST(SyntheticSpecJson, RoundTrip) {
  SyntheticSpec s;
  s.scene.gaussian_count = 17;
  s.scene.placement = Placement::kRandomInSphere;
  s.scene.colors = ColorScheme::kPositional;
  s.train.view_count = 9;
  s.write_test = false;
  const SyntheticSpec back = synthetic_spec_from_json(synthetic_spec_to_json(s));
  EXPECT_EQ(synthetic_spec_to_json(back), synthetic_spec_to_json(s));
  EXPECT_EQ(back.scene.placement, Placement::kRandomInSphere);
  EXPECT_THROW(synthetic_spec_from_json(R"({"scene": {"placement": "cube"}})"), ParseError);
}

TEST(MetricsLog, Format) {
  const test::TempDir dir("log");
  write_metrics_log({{0, 0.5, 12.25, 64}, {1, 0.25, 14.5, 60}}, dir / "m.tsv");
  const std::vector<std::uint8_t> bytes = read_file(dir / "m.tsv");
  const std::string text(bytes.begin(), bytes.end());
  EXPECT_EQ(text.substr(0, text.find('\n')), "iteration\tloss\tpsnr\tactive_count");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  EXPECT_EQ(format_metrics_row({3, 0.5, 20.0, 8}).substr(0, 2), "3\t");
}

}  // namespace
}  // namespace gvfit
