#include "gvfit/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gvfit/error.hpp"

namespace gvfit {

Channels GaussianAttributes::to_channels() const {
  Channels c{};
  for (int k = 0; k < 3; ++k) {
    c[channel::kOffset + k] = offset[k];
    c[channel::kLogScale + k] = log_scale[k];
    c[channel::kColor + k] = color[k];
  }
  for (int k = 0; k < 4; ++k) c[channel::kRotation + k] = rotation[k];
  c[channel::kOpacity] = opacity_logit;
  return c;
}

GaussianAttributes GaussianAttributes::from_channels(const Channels& c) {
  GaussianAttributes a;
  for (int k = 0; k < 3; ++k) {
    a.offset[k] = c[channel::kOffset + k];
    a.log_scale[k] = c[channel::kLogScale + k];
    a.color[k] = c[channel::kColor + k];
  }
  for (int k = 0; k < 4; ++k) a.rotation[k] = c[channel::kRotation + k];
  a.opacity_logit = c[channel::kOpacity];
  return a;
}

GaussianVolume::GaussianVolume(std::size_t resolution, Bounds bounds)
    : n_(resolution), bounds_(std::move(bounds)) {
  if (resolution < 2) throw ConfigError("volume resolution must be >= 2");
  for (int k = 0; k < 3; ++k) {
    if (!(bounds_.hi[k] > bounds_.lo[k])) throw ConfigError("volume bounds must have positive extent");
  }
  attrs_.resize(n_ * n_ * n_);
  mask_.assign(n_ * n_ * n_, 1);
}

Vec3 GaussianVolume::spacing() const {
  return bounds_.extent() / static_cast<double>(n_ - 1);
}

std::size_t GaussianVolume::active_count() const noexcept {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

std::size_t grid_index(const GridCoord& c, std::size_t n) {
  if (c.x >= n || c.y >= n || c.z >= n) throw RangeError("grid coordinate outside lattice");
  return (c.x * n + c.y) * n + c.z;
}

GridCoord grid_coord(std::size_t index, std::size_t n) {
  if (index >= n * n * n) {
    throw RangeError("grid index " + std::to_string(index) + " outside [0, " +
                     std::to_string(n * n * n) + ")");
  }
  return {index / (n * n), (index / n) % n, index % n};
}

Vec3 grid_position(std::size_t index, std::size_t n, const Bounds& bounds) {
  const GridCoord c = grid_coord(index, n);
  const Vec3 step = bounds.extent() / static_cast<double>(n - 1);
  return {bounds.lo.x() + step.x() * static_cast<double>(c.x),
          bounds.lo.y() + step.y() * static_cast<double>(c.y),
          bounds.lo.z() + step.z() * static_cast<double>(c.z)};
}

Vec3 grid_position(std::size_t index, const GaussianVolume& volume) {
  return grid_position(index, volume.resolution(), volume.bounds());
}

Vec3 gaussian_center(const GaussianAttributes& attrs, const Vec3& p) {
  return p + attrs.offset.cast<double>();
}

Vec3 gaussian_center(const GaussianVolume& volume, std::size_t index) {
  return gaussian_center(volume.at(index), grid_position(index, volume));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

ActivatedGaussian activate(const GaussianAttributes& attrs) {
  const Quat q = attrs.rotation.cast<double>();
  const double norm = q.norm();
  if (!(norm > 0.0)) throw DegenerateRotation("quaternion has zero norm");
  ActivatedGaussian out;
  out.scale = attrs.log_scale.cast<double>().array().exp();
  out.rotation = q / norm;
  out.opacity = sigmoid(attrs.opacity_logit);
  out.color = attrs.color.cast<double>();
  return out;
}

}  // namespace gvfit
