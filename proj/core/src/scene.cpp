#include "gvfit/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "gvfit/error.hpp"

namespace gvfit {
namespace {

bool in_open_unit(const std::pair<double, double>& r) {
  return r.first > 0.0 && r.second < 1.0 && r.first <= r.second;
}

template <class Dist>
Vec3 draw3(Dist& dist, std::mt19937_64& rng) {
  Vec3 v;
  for (int k = 0; k < 3; ++k) v[k] = dist(rng);
  return v;
}

Vec3 random_direction(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    const Vec3 d = draw3(normal, rng);
    const double n = d.norm();
    if (n > 1e-12) return d / n;
  }
}

Vec3 sample_center(const SceneSpec& spec, const Vec3& mid, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  switch (spec.placement) {
    case Placement::kRandomInSphere: {
      const double r = spec.sphere_radius * std::cbrt(unit(rng));
      return mid + r * random_direction(rng);
    }
    case Placement::kShell: {
      const double a = std::pow(spec.shell_inner, 3.0);
      const double b = std::pow(spec.shell_outer, 3.0);
      const double r = std::cbrt(a + (b - a) * unit(rng));
      return mid + r * random_direction(rng);
    }
    case Placement::kLatticeSubset:
      break;
  }
  return mid;
}

// Nearest unoccupied lattice point to `c`, searching cubes of growing radius.
std::size_t nearest_free(const Vec3& c, std::size_t n, const Bounds& bounds,
                         const std::vector<std::uint8_t>& taken) {
  const Vec3 spacing = bounds.extent() / static_cast<double>(n - 1);
  long home[3];
  for (int k = 0; k < 3; ++k) {
    home[k] = std::clamp(std::lround((c[k] - bounds.lo[k]) / spacing[k]), 0L,
                         static_cast<long>(n) - 1);
  }
  const long ln = static_cast<long>(n);
  std::size_t best = taken.size();
  double best_d = std::numeric_limits<double>::infinity();
  for (long r = 0; r < ln; ++r) {
    // Visit the whole cube; simpler than walking the shell and cheap at
    // scene sizes.
    for (long x = std::max(0L, home[0] - r); x <= std::min(ln - 1, home[0] + r); ++x) {
      for (long y = std::max(0L, home[1] - r); y <= std::min(ln - 1, home[1] + r); ++y) {
        for (long z = std::max(0L, home[2] - r); z <= std::min(ln - 1, home[2] + r); ++z) {
          const std::size_t i =
              grid_index({static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                          static_cast<std::size_t>(z)},
                         n);
          if (taken[i]) continue;
          const double d = (grid_position(i, n, bounds) - c).squaredNorm();
          if (d < best_d) {
            best_d = d;
            best = i;
          }
        }
      }
    }
    // c lies within half a spacing of home, so anything outside this cube is
    // at least (r + 0.5) spacings away.
    const double reach = (static_cast<double>(r) + 0.5) * spacing.minCoeff();
    if (best != taken.size() && best_d <= reach * reach) return best;
  }
  if (best != taken.size()) return best;
  throw ConfigError("scene has more Gaussians than lattice points");
}

}  // namespace

Placement parse_placement(const std::string& name) {
  if (name == "random-in-sphere") return Placement::kRandomInSphere;
  if (name == "shell") return Placement::kShell;
  if (name == "lattice-subset") return Placement::kLatticeSubset;
  throw ConfigError("unknown placement '" + name + "'");
}

std::string to_string(Placement p) {
  switch (p) {
    case Placement::kRandomInSphere: return "random-in-sphere";
    case Placement::kShell: return "shell";
    case Placement::kLatticeSubset: return "lattice-subset";
  }
  return "shell";
}

ColorScheme parse_color_scheme(const std::string& name) {
  if (name == "random") return ColorScheme::kRandom;
  if (name == "positional") return ColorScheme::kPositional;
  if (name == "constant") return ColorScheme::kConstant;
  throw ConfigError("unknown color scheme '" + name + "'");
}

std::string to_string(ColorScheme c) {
  switch (c) {
    case ColorScheme::kRandom: return "random";
    case ColorScheme::kPositional: return "positional";
    case ColorScheme::kConstant: return "constant";
  }
  return "random";
}

void SceneSpec::validate() const {
  if (resolution < 2) throw ConfigError("scene resolution must be at least 2");
  if (gaussian_count < 1) throw ConfigError("gaussian_count must be at least 1");
  if (gaussian_count > resolution * resolution * resolution) {
    throw ConfigError("gaussian_count exceeds the number of lattice points");
  }
  if (!in_open_unit(opacity_range)) throw ConfigError("opacity_range must lie inside (0, 1)");
  if (!(scale_range.first > 0.0 && scale_range.first <= scale_range.second) ||
      !std::isfinite(scale_range.second)) {
    throw ConfigError("scale_range must be positive and ordered");
  }
  if ((bounds.hi.array() <= bounds.lo.array()).any()) throw ConfigError("empty scene bounds");
  const double half = 0.5 * bounds.extent().minCoeff();
  if (placement == Placement::kRandomInSphere && !(sphere_radius > 0.0 && sphere_radius <= half)) {
    throw ConfigError("sphere_radius must be positive and fit inside the bounds");
  }
  if (placement == Placement::kShell &&
      !(shell_inner >= 0.0 && shell_inner <= shell_outer && shell_outer <= half)) {
    throw ConfigError("shell radii must satisfy 0 <= inner <= outer <= half extent");
  }
}

GaussianVolume make_scene(const SceneSpec& spec) {
  spec.validate();
  const std::size_t n = spec.resolution;
  GaussianVolume vol(n, spec.bounds);
  for (std::size_t i = 0; i < vol.size(); ++i) {
    vol.at(i) = GaussianAttributes{};
    vol.at(i).opacity_logit = kInvisibleLogit;
    vol.set_active(i, true);
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto in_range = [&](const std::pair<double, double>& r) {
    return r.first + (r.second - r.first) * unit(rng);
  };
  const Vec3 mid = 0.5 * (spec.bounds.lo + spec.bounds.hi);
  std::vector<std::uint8_t> taken(vol.size(), 0);

  std::vector<std::size_t> subset;
  if (spec.placement == Placement::kLatticeSubset) {
    subset.resize(vol.size());
    for (std::size_t i = 0; i < subset.size(); ++i) subset[i] = i;
    std::shuffle(subset.begin(), subset.end(), rng);
    subset.resize(spec.gaussian_count);
  }

  for (std::size_t g = 0; g < spec.gaussian_count; ++g) {
    std::size_t idx;
    Vec3 center;
    if (spec.placement == Placement::kLatticeSubset) {
      idx = subset[g];
      center = grid_position(idx, vol);
    } else {
      center = sample_center(spec, mid, rng);
      idx = nearest_free(center, n, spec.bounds, taken);
    }
    taken[idx] = 1;

    GaussianAttributes& a = vol.at(idx);
    a.offset = (center - grid_position(idx, vol)).cast<float>();
    for (int k = 0; k < 3; ++k) {
      a.log_scale[k] = static_cast<float>(std::log(in_range(spec.scale_range)));
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Vector4d q;
    for (int k = 0; k < 4; ++k) q[k] = normal(rng);
    if (q.norm() < 1e-9) q = Eigen::Vector4d(1, 0, 0, 0);
    a.rotation = q.normalized().cast<float>();
    a.opacity_logit = static_cast<float>(logit(in_range(spec.opacity_range)));
    Vec3 color;
    switch (spec.colors) {
      case ColorScheme::kRandom:
        color = (0.05 + 0.9 * draw3(unit, rng).array()).matrix();
        break;
      case ColorScheme::kPositional: {
        const Vec3 rel = (center - spec.bounds.lo).cwiseQuotient(spec.bounds.extent());
        color = (0.1 + 0.8 * rel.array()).matrix();
        break;
      }
      case ColorScheme::kConstant:
        color = spec.constant_color;
        break;
    }
    a.color = color.cast<float>();
  }
  return vol;
}

std::vector<Vec3> fibonacci_sphere(std::size_t count) {
  std::vector<Vec3> dirs(count);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(count);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    dirs[i] = Vec3(r * std::cos(phi), r * std::sin(phi), z);
  }
  return dirs;
}

Camera orbit_camera(double azimuth, double elevation, double radius, int width, int height,
                    double fov_x) {
  const Vec3 eye(radius * std::cos(elevation) * std::cos(azimuth),
                 radius * std::cos(elevation) * std::sin(azimuth), radius * std::sin(elevation));
  return look_at(eye, Vec3::Zero(), width, height, fov_x);
}

PosedImageSet render_dataset(const GaussianVolume& scene, const DatasetSpec& spec,
                             const RenderSettings& settings) {
  if (spec.view_count < 1) throw ConfigError("view_count must be at least 1");
  if (!(spec.radius > 0.0)) throw ConfigError("camera radius must be positive");
  if (spec.image_size < 1) throw ConfigError("image_size must be positive");

  const std::vector<Vec3> dirs = fibonacci_sphere(spec.view_count);
  const double c = std::cos(spec.azimuth_shift);
  const double s = std::sin(spec.azimuth_shift);

  PosedImageSet out;
  out.background = spec.background;
  out.bounds = scene.bounds();
  out.views.resize(dirs.size());
  RenderSettings serial = settings;
  serial.threads = 1;
  const long count = static_cast<long>(dirs.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < count; ++i) {
    const Vec3& d = dirs[static_cast<std::size_t>(i)];
    const Vec3 eye = spec.radius * Vec3(c * d.x() - s * d.y(), s * d.x() + c * d.y(), d.z());
    PosedImage& view = out.views[static_cast<std::size_t>(i)];
    view.camera = look_at(eye, Vec3::Zero(), spec.image_size, spec.image_size, spec.fov_x);
    view.image = render(scene, view.camera, spec.background, serial);
  }
  return out;
}

}  // namespace gvfit
