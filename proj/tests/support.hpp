#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <random>
#include <vector>

#include "gvfit/camera.hpp"
#include "gvfit/render.hpp"
#include "gvfit/volume.hpp"

namespace gvfit::test {

inline GaussianVolume random_volume(std::size_t n, std::mt19937_64& rng, double active_prob = 1.0,
                                    const Bounds& bounds = {}) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nrm(0.0, 1.0);
  GaussianVolume vol(n, bounds);
  const double spacing = vol.spacing().minCoeff();
  for (std::size_t i = 0; i < vol.size(); ++i) {
    GaussianAttributes& a = vol.at(i);
    for (int k = 0; k < 3; ++k) a.offset[k] = static_cast<float>((u(rng) - 0.5) * spacing);
    for (int k = 0; k < 3; ++k) a.log_scale[k] = static_cast<float>(std::log(spacing * (0.2 + 0.5 * u(rng))));
    for (int k = 0; k < 4; ++k) a.rotation[k] = static_cast<float>(nrm(rng));
    a.opacity_logit = static_cast<float>(nrm(rng) * 2.0);
    for (int k = 0; k < 3; ++k) a.color[k] = static_cast<float>(u(rng));
    vol.set_active(i, u(rng) < active_prob);
  }
  return vol;
}

inline ImageBuffer random_image(int w, int h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageBuffer img(w, h);
  for (double& v : img.rgb) v = u(rng);
  return img;
}

// Settings that keep the composite smooth enough for finite differences:
// the per-pixel cutoff sits at alpha 1e-10 instead of 1/255.
inline RenderSettings smooth_settings() {
  RenderSettings s;
  s.min_alpha = 1e-10;
  return s;
}

/// Central difference of `f` with respect to a float-stored value. Uses the
/// actually representable perturbations, so rounding of the stored float
/// does not bias the quotient.
template <class F>
double central_difference(float& value, double step, F&& f) {
  const float orig = value;
  const float plus = static_cast<float>(orig + step);
  const float minus = static_cast<float>(orig - step);
  value = plus;
  const double fp = f();
  value = minus;
  const double fm = f();
  value = orig;
  return (fp - fm) / (static_cast<double>(plus) - static_cast<double>(minus));
}

template <class F>
double central_difference(double& value, double step, F&& f) {
  const double orig = value;
  value = orig + step;
  const double fp = f();
  value = orig - step;
  const double fm = f();
  value = orig;
  return (fp - fm) / (2.0 * step);
}

/// |a - b| relative to the larger magnitude, with an absolute floor.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline float& channel_ref(GaussianAttributes& a, std::size_t c) {
  if (c < 3) return a.offset[static_cast<int>(c)];
  if (c < 6) return a.log_scale[static_cast<int>(c - 3)];
  if (c < 10) return a.rotation[static_cast<int>(c - 6)];
  if (c == 10) return a.opacity_logit;
  return a.color[static_cast<int>(c - 11)];
}

// Direct evaluation of SSIM from its definition: 2D Gaussian window
// weights applied per pixel with out-of-image samples treated as zero.
inline double ssim_by_definition(const ImageBuffer& a, const ImageBuffer& b) {
  constexpr int r = 5;
  constexpr double sigma = 1.5;
  double w1[2 * r + 1];
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += (w1[i + r] = std::exp(-i * i / (2 * sigma * sigma)));
  for (double& v : w1) v /= sum;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < a.width; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= a.width || yy >= a.height) continue;
            const double w = w1[dx + r] * w1[dy + r];
            const double va = a.at(xx, yy, c), vb = b.at(xx, yy, c);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    }
  }
  return total / (3.0 * a.width * a.height);
}

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t failed = 0;
};

/// Compares every analytic partial of L = <upstream, render(volume)> for
/// the active points against central differences.
inline GradCheck check_render_gradients(GaussianVolume vol, const Camera& cam, const Vec3& bg,
                                        const RenderSettings& settings,
                                        const std::vector<double>& upstream, double step = 1e-3,
                                        double tol = 1e-3) {
  const GradientBuffer g = render_backward(vol, cam, bg, upstream, settings);
  auto loss = [&] {
    const ImageBuffer img = render(vol, cam, bg, settings);
    double acc = 0.0;
    for (std::size_t i = 0; i < img.rgb.size(); ++i) acc += upstream[i] * img.rgb[i];
    return acc;
  };
  GradCheck out;
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (!vol.active(i)) continue;
    for (std::size_t c = 0; c < kChannels; ++c) {
      const double num = central_difference(channel_ref(vol.at(i), c), step, loss);
      const double e = rel_error(g.grads[i][c], num);
      out.max_rel = std::max(out.max_rel, e);
      ++out.checked;
      if (!(e < tol)) ++out.failed;
    }
  }
  return out;
}

/// Camera at distance `dist` on a fixed oblique direction looking at the origin.
inline Camera test_camera(int size = 32, double dist = 3.0, double fov = 0.9) {
  return look_at(dist * Vec3(0.6, -0.7, 0.4).normalized(), Vec3::Zero(), size, size, fov);
}

/// Volume at N=2 over [-0.5, 0.5]^3 with `count` active points, opacities in
/// [0.05, 0.8] and scales big enough to cover several pixels.
inline GaussianVolume gradient_scene(std::size_t count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nrm(0.0, 1.0);
  GaussianVolume vol(2, Bounds{Vec3::Constant(-0.5), Vec3::Constant(0.5)});
  std::vector<std::size_t> idx(vol.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t k = 0; k < vol.size(); ++k) {
    GaussianAttributes& a = vol.at(idx[k]);
    for (int j = 0; j < 3; ++j) a.offset[j] = static_cast<float>(0.2 * (u(rng) - 0.5));
    for (int j = 0; j < 3; ++j) a.log_scale[j] = static_cast<float>(std::log(0.12 + 0.2 * u(rng)));
    for (int j = 0; j < 4; ++j) a.rotation[j] = static_cast<float>(nrm(rng));
    a.opacity_logit = static_cast<float>(logit(0.05 + 0.75 * u(rng)));
    for (int j = 0; j < 3; ++j) a.color[j] = static_cast<float>(u(rng));
    vol.set_active(idx[k], k < count);
  }
  return vol;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("gvfit_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace gvfit::test
