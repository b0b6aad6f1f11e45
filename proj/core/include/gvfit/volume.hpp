#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace gvfit {

using Vec3 = Eigen::Vector3d;
using Vec3f = Eigen::Vector3f;
using Vec4f = Eigen::Vector4f;
using Quat = Eigen::Vector4d;  // (w, x, y, z)

// Number of stored channels per Gaussian:
// offset(3) log_scale(3) rotation(4) opacity_logit(1) color(3).
inline constexpr std::size_t kChannels = 14;

namespace channel {
inline constexpr std::size_t kOffset = 0;
inline constexpr std::size_t kLogScale = 3;
inline constexpr std::size_t kRotation = 6;
inline constexpr std::size_t kOpacity = 10;
inline constexpr std::size_t kColor = 11;
}  // namespace channel

using Channels = std::array<float, kChannels>;

struct Bounds {
  Vec3 lo{-1.0, -1.0, -1.0};
  Vec3 hi{1.0, 1.0, 1.0};

  Vec3 extent() const { return hi - lo; }
  double diagonal() const { return extent().norm(); }
  friend bool operator==(const Bounds&, const Bounds&) = default;
};

struct GridCoord {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t z = 0;
  friend auto operator<=>(const GridCoord&, const GridCoord&) = default;
};

/// Stored (pre-activation) parameters of one Gaussian.
///
/// Scale is kept as a log, opacity as a logit and rotation as an
/// unnormalized quaternion so that unconstrained updates stay valid.
/// Color is linear RGB (degree-0 only) and is used as-is.
struct GaussianAttributes {
  Vec3f offset = Vec3f::Zero();
  Vec3f log_scale = Vec3f::Zero();
  Vec4f rotation{1.0f, 0.0f, 0.0f, 0.0f};
  float opacity_logit = 0.0f;
  Vec3f color{0.5f, 0.5f, 0.5f};

  Channels to_channels() const;
  static GaussianAttributes from_channels(const Channels& c);
  friend bool operator==(const GaussianAttributes&, const GaussianAttributes&) = default;
};

struct ActivatedGaussian {
  Vec3 scale;
  Quat rotation;  // unit length
  double opacity;
  Vec3 color;
};

/// A fixed N^3 lattice of grid-anchored Gaussians.
///
/// Storage is lexicographic with z varying fastest:
/// index = (x * N + y) * N + z. The attribute array length is N^3 for the
/// lifetime of the object; only the active mask changes.
class GaussianVolume {
 public:
  GaussianVolume(std::size_t resolution, Bounds bounds);

  std::size_t resolution() const noexcept { return n_; }
  std::size_t size() const noexcept { return attrs_.size(); }
  const Bounds& bounds() const noexcept { return bounds_; }
  // Lattice spacing per axis, extent / (N - 1).
  Vec3 spacing() const;

  const GaussianAttributes& at(std::size_t i) const { return attrs_.at(i); }
  GaussianAttributes& at(std::size_t i) { return attrs_.at(i); }
  std::span<const GaussianAttributes> attributes() const noexcept { return attrs_; }
  std::span<GaussianAttributes> attributes() noexcept { return attrs_; }

  bool active(std::size_t i) const { return mask_.at(i) != 0; }
  void set_active(std::size_t i, bool on) { mask_.at(i) = on ? 1 : 0; }
  std::span<const std::uint8_t> active_mask() const noexcept { return mask_; }
  std::size_t active_count() const noexcept;

  friend bool operator==(const GaussianVolume&, const GaussianVolume&) = default;

 private:
  std::size_t n_;
  Bounds bounds_;
  std::vector<GaussianAttributes> attrs_;
  std::vector<std::uint8_t> mask_;
};

/// Grid indices currently deactivated (excluded from render and optimization).
struct CandidatePool {
  std::set<std::size_t> deactivated;

  std::size_t size() const noexcept { return deactivated.size(); }
  bool empty() const noexcept { return deactivated.empty(); }
  bool contains(std::size_t i) const { return deactivated.count(i) != 0; }
};

std::size_t grid_index(const GridCoord& c, std::size_t resolution);
GridCoord grid_coord(std::size_t index, std::size_t resolution);

/// Lattice point of `index`. Throws RangeError outside [0, N^3).
Vec3 grid_position(std::size_t index, const GaussianVolume& volume);
Vec3 grid_position(std::size_t index, std::size_t resolution, const Bounds& bounds);

/// mu = p + offset.
Vec3 gaussian_center(const GaussianAttributes& attrs, const Vec3& p);
Vec3 gaussian_center(const GaussianVolume& volume, std::size_t index);

/// Throws DegenerateRotation on a zero-norm quaternion.
ActivatedGaussian activate(const GaussianAttributes& attrs);

double sigmoid(double x);
double logit(double p);

}  // namespace gvfit
