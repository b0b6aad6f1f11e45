#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "gvfit/camera.hpp"
#include "gvfit/volume.hpp"

namespace gvfit {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

struct RenderSettings {
  double low_pass = 0.3;            // px^2 added to the cov2d diagonal
  double near_plane = 0.2;
  double alpha_max = 0.99;
  // A splat is skipped at a pixel once its alpha falls below this value.
  // The binning radius is derived from it, so it must be > 0.
  double min_alpha = 1.0 / 255.0;
  double transmittance_floor = 1e-4;
  int tile_size = 16;
  int threads = 0;  // 0 = library default, 1 = serial
};

struct ProjectedSplat {
  Vec2 mean2d;
  Mat2 cov2d;
  double depth = 0.0;
  Vec3 color;
  double opacity = 0.0;
  std::size_t source_index = 0;
};

/// Rotation matrix of a unit quaternion (w, x, y, z).
Mat3 rotation_matrix(const Quat& unit_q);

/// Sigma = R S S^T R^T with S = diag(exp(log_scale)).
Mat3 covariance3d(const Vec3& log_scale, const Quat& rotation);

/// EWA projection of a 3D Gaussian. Returns nullopt when the splat is behind
/// the near plane or its 99% ellipse misses the image.
std::optional<ProjectedSplat> project(const Vec3& mean, const Mat3& cov, const Camera& cam,
                                      const RenderSettings& settings = {});

/// Per-Gaussian partials of a scalar loss, indexed by grid index and laid out
/// in the stored channel order (see `channel::`).
struct GradientBuffer {
  std::vector<std::array<double, kChannels>> grads;
  // ||dL/d mean2d|| in pixels, summed over the views that produced this buffer.
  std::vector<double> viewspace_grad_norm;
  // Number of views in which the Gaussian survived culling.
  std::vector<std::uint32_t> visible_count;

  GradientBuffer() = default;
  explicit GradientBuffer(std::size_t n);

  std::size_t size() const noexcept { return grads.size(); }
  void clear();
  GradientBuffer& operator+=(const GradientBuffer& other);
};

/// Projected, depth-sorted and tile-binned splats for one (volume, camera)
/// pair, together with the forward image. Per-pixel blending state is not
/// kept; the backward pass recomputes it tile by tile.
struct RenderState {
  struct Splat {
    double mx, my;        // mean2d
    double ca, cb, cc;    // conic (inverse cov2d): q = ca dx^2 + 2 cb dx dy + cc dy^2
    double q_cut;         // pixels with q > q_cut have alpha < min_alpha
    double opacity;
    double color[3];
  };

  Camera camera;
  Vec3 background = Vec3::Zero();
  RenderSettings settings;
  std::size_t volume_size = 0;
  std::uint64_t volume_hash = 0;

  std::vector<ProjectedSplat> projected;   // depth order
  std::vector<Splat> splats;               // depth order, raster fields
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<std::uint32_t>> tile_lists;  // positions into `splats`

  ImageBuffer image;
};

/// Forward rasterization keeping the projection/binning state.
RenderState rasterize(const GaussianVolume& volume, const Camera& cam, const Vec3& background,
                      const RenderSettings& settings = {});

/// Tile-based front-to-back alpha compositing of all active Gaussians.
ImageBuffer render(const GaussianVolume& volume, const Camera& cam, const Vec3& background,
                   const RenderSettings& settings = {});

/// Non-tiled single-threaded compositing; every pixel walks the full
/// depth-sorted splat list. Same math as `render`.
ImageBuffer render_reference(const GaussianVolume& volume, const Camera& cam,
                             const Vec3& background, const RenderSettings& settings = {});

/// Analytic backward pass. `upstream` is dL/d rgb with the ImageBuffer
/// layout (H*W*3). Throws StateError when `state` was not produced for
/// this volume and camera, or when upstream has the wrong size.
GradientBuffer render_backward(const RenderState& state, const GaussianVolume& volume,
                               const Camera& cam, std::span<const double> upstream);

GradientBuffer render_backward(const GaussianVolume& volume, const Camera& cam,
                               const Vec3& background, std::span<const double> upstream,
                               const RenderSettings& settings = {});

std::uint64_t volume_fingerprint(const GaussianVolume& volume);

}  // namespace gvfit
