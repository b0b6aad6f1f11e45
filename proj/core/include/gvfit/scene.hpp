#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>

#include "gvfit/camera.hpp"
#include "gvfit/render.hpp"
#include "gvfit/volume.hpp"

namespace gvfit {

enum class Placement { kRandomInSphere, kShell, kLatticeSubset };
enum class ColorScheme { kRandom, kPositional, kConstant };

Placement parse_placement(const std::string& name);
std::string to_string(Placement p);
ColorScheme parse_color_scheme(const std::string& name);
std::string to_string(ColorScheme c);

/// Recipe for a synthetic ground-truth scene.
///
/// Opacity is given in activated units (0, 1); scale is the per-axis
/// standard deviation in world units. Centers are drawn inside
/// `sphere_radius` (random-in-sphere) or between the shell radii, then
/// snapped to the nearest free lattice point with the remainder kept as
/// the offset.
struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t gaussian_count = 200;
  Placement placement = Placement::kShell;
  ColorScheme colors = ColorScheme::kRandom;
  std::pair<double, double> opacity_range{0.6, 0.95};
  std::pair<double, double> scale_range{0.04, 0.09};
  Vec3 constant_color{0.8, 0.3, 0.2};

  std::size_t resolution = 32;
  Bounds bounds;
  double sphere_radius = 0.7;
  double shell_inner = 0.45;
  double shell_outer = 0.65;

  // Throws ConfigError.
  void validate() const;
};

/// Opacity logit given to lattice points that carry no scene Gaussian.
inline constexpr float kInvisibleLogit = -30.0f;

/// Fully active volume; only `gaussian_count` points are visible.
/// Deterministic in spec.seed.
GaussianVolume make_scene(const SceneSpec& spec);

/// `count` directions spread over the unit sphere (Fibonacci lattice).
std::vector<Vec3> fibonacci_sphere(std::size_t count);

/// Camera at the given azimuth/elevation (radians, z up) and distance,
/// looking at the origin.
Camera orbit_camera(double azimuth, double elevation, double radius, int width, int height,
                    double fov_x);

inline constexpr double kDefaultFovX = 0.8575560;  // ~49.1 degrees

struct DatasetSpec {
  std::size_t view_count = 72;
  double radius = 2.4;
  int image_size = 128;
  double fov_x = kDefaultFovX;
  Vec3 background{1.0, 1.0, 1.0};
  // Rotates the Fibonacci pattern about z so a second set does not reuse
  // the same directions.
  double azimuth_shift = 0.0;
};

/// Renders `scene` from cameras on a sphere around the origin.
PosedImageSet render_dataset(const GaussianVolume& scene, const DatasetSpec& spec,
                             const RenderSettings& settings = {});

inline PosedImageSet render_dataset(const GaussianVolume& scene, std::size_t view_count,
                                    double radius, int image_size) {
  DatasetSpec spec;
  spec.view_count = view_count;
  spec.radius = radius;
  spec.image_size = image_size;
  return render_dataset(scene, spec);
}

}  // namespace gvfit
