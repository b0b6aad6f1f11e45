#include "gvfit/camera.hpp"

#include <cmath>

#include <Eigen/Geometry>

#include "gvfit/error.hpp"

namespace gvfit {

void Camera::validate() const {
  if (width <= 0 || height <= 0) throw ConfigError("camera dimensions must be positive");
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw ConfigError("camera principal point outside the image");
  }
  const double err = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(err <= 1e-6)) throw ConfigError("camera rotation is not orthonormal");
  if (!translation.allFinite()) throw ConfigError("camera translation is not finite");
}

Mat4 Camera::camera_to_world() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation.transpose();
  m.topRightCorner<3, 1>() = position();
  return m;
}

Camera Camera::from_camera_to_world(const Mat4& c2w, int width, int height, double fx,
                                    double fy, double cx, double cy) {
  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.rotation = c2w.topLeftCorner<3, 3>().transpose();
  cam.translation = -cam.rotation * c2w.topRightCorner<3, 1>();
  return cam;
}

double focal_from_fov(double fov, int pixels) {
  return 0.5 * static_cast<double>(pixels) / std::tan(0.5 * fov);
}

Camera look_at(const Vec3& eye, const Vec3& target, int width, int height, double fov_x,
               const Vec3& up) {
  const Vec3 fwd = (target - eye).normalized();
  Vec3 ref = up.normalized();
  if (std::abs(fwd.dot(ref)) > 1.0 - 1e-9) {
    ref = std::abs(fwd.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  }
  // Image y points down, so "down" is the negated world up projected off fwd.
  const Vec3 right = fwd.cross(ref).normalized();
  const Vec3 down = fwd.cross(right);

  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = focal_from_fov(fov_x, width);
  cam.fy = cam.fx;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = fwd.transpose();
  cam.translation = -cam.rotation * eye;
  return cam;
}

ImageBuffer::ImageBuffer(int w, int h, const Vec3& fill, double trans)
    : width(w), height(h) {
  if (w < 0 || h < 0) throw ShapeError("image dimensions must be non-negative");
  rgb.resize(pixels() * 3);
  for (std::size_t i = 0; i < pixels(); ++i) {
    rgb[3 * i] = fill.x();
    rgb[3 * i + 1] = fill.y();
    rgb[3 * i + 2] = fill.z();
  }
  transmittance.assign(pixels(), trans);
}

}  // namespace gvfit
