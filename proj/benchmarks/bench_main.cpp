#include <benchmark/benchmark.h>

#include <random>

#include "gvfit/fit.hpp"
#include "gvfit/gdf.hpp"
#include "gvfit/objective.hpp"
#include "gvfit/render.hpp"
#include "gvfit/scene.hpp"

namespace gvfit {
namespace {

GaussianVolume bench_scene(std::size_t n) {
  SceneSpec spec;
  spec.seed = 1;
  spec.resolution = n;
  spec.gaussian_count = n * n * n / 8;
  return make_scene(spec);
}

Camera bench_camera(int size) { return orbit_camera(0.7, 0.4, 2.4, size, size, kDefaultFovX); }

// Forward pass over a freshly initialized volume, every point visible.
void BM_RenderInitialized(benchmark::State& state) {
  const auto [vol, pool] = initialize(static_cast<std::size_t>(state.range(0)));
  const Camera cam = bench_camera(static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(rasterize(vol, cam, Vec3::Ones()));
}
BENCHMARK(BM_RenderInitialized)->Args({16, 128})->Args({32, 128})->Unit(benchmark::kMillisecond);

void BM_RenderScene(benchmark::State& state) {
  const GaussianVolume vol = bench_scene(32);
  const Camera cam = bench_camera(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(render(vol, cam, Vec3::Ones()));
}
BENCHMARK(BM_RenderScene)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Backward(benchmark::State& state) {
  const auto [vol, pool] = initialize(static_cast<std::size_t>(state.range(0)));
  const Camera cam = bench_camera(128);
  const RenderState rs = rasterize(vol, cam, Vec3::Ones());
  const std::vector<double> up(rs.image.rgb.size(), 1e-3);
  for (auto _ : state) benchmark::DoNotOptimize(render_backward(rs, vol, cam, up));
}
BENCHMARK(BM_Backward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_FittingLoss(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageBuffer a(128, 128, Vec3::Zero()), b(128, 128, Vec3::Zero());
  for (double& v : a.rgb) v = u(rng);
  for (double& v : b.rgb) v = u(rng);
  const auto [vol, pool] = initialize(16);
  LossWeights w;
  w.eps_offsets = default_eps_offsets(16, Bounds{});
  for (auto _ : state) benchmark::DoNotOptimize(fitting_loss(a, b, vol, w));
}
BENCHMARK(BM_FittingLoss)->Unit(benchmark::kMillisecond);

void BM_ExtractGdf(benchmark::State& state) {
  const GaussianVolume vol = bench_scene(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(extract_gdf(vol));
}
BENCHMARK(BM_ExtractGdf)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_GdfOracle(benchmark::State& state) {
  const GaussianVolume vol = bench_scene(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(gdf_oracle(vol));
}
BENCHMARK(BM_GdfOracle)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace gvfit

BENCHMARK_MAIN();
