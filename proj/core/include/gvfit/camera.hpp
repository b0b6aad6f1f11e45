#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "gvfit/volume.hpp"

namespace gvfit {

using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Pinhole camera. After applying world_to_camera the camera looks down +z,
/// with +x to the right and +y down the image. Pixel (u, v) covers
/// [u, u+1) x [v, v+1); its center sits at (u + 0.5, v + 0.5).
struct Camera {
  int width = 0;
  int height = 0;
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  Mat3 rotation = Mat3::Identity();     // world -> camera
  Vec3 translation = Vec3::Zero();      // world -> camera

  // Throws ConfigError when intrinsics or the rotation are invalid.
  void validate() const;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 position() const { return -rotation.transpose() * translation; }
  Vec3 forward() const { return rotation.row(2).transpose(); }

  // Camera-to-world transform in this (+z forward, y down) convention.
  Mat4 camera_to_world() const;
  static Camera from_camera_to_world(const Mat4& c2w, int width, int height, double fx,
                                     double fy, double cx, double cy);

  friend bool operator==(const Camera&, const Camera&) = default;
};

/// Camera at `eye` looking at `target`, with horizontal field of view `fov_x`
/// (radians) and the principal point at the image center. `up` is the world
/// up direction; a fallback is used when the view direction is parallel to it.
Camera look_at(const Vec3& eye, const Vec3& target, int width, int height, double fov_x,
               const Vec3& up = Vec3::UnitZ());

/// Focal length in pixels for a horizontal field of view.
double focal_from_fov(double fov, int pixels);

/// Linear RGB image, row-major with interleaved channels, plus per-pixel
/// final transmittance. Decoded images carry zero transmittance.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;
  std::vector<double> transmittance;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, const Vec3& fill = Vec3::Zero(), double trans = 0.0);

  std::size_t pixels() const noexcept {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  double& at(int x, int y, int c) {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  double at(int x, int y, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  Vec3 pixel(int x, int y) const { return {at(x, y, 0), at(x, y, 1), at(x, y, 2)}; }
};

/// A target image with its camera.
struct PosedImage {
  Camera camera;
  ImageBuffer image;
};

/// Posed multi-view observations of one object.
struct PosedImageSet {
  std::vector<PosedImage> views;
  Vec3 background{1.0, 1.0, 1.0};
  Bounds bounds;
};

}  // namespace gvfit
