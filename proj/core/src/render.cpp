#include "gvfit/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include <Eigen/LU>

#include "gvfit/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gvfit {
namespace {

// Squared Mahalanobis radius of the 99% confidence ellipse (chi^2, 2 dof).
constexpr double kChi2_99 = 9.21034037197618;

struct Contribution {
  std::uint32_t slot;  // position within the pixel's list
  std::uint32_t pos;
  double alpha;
  double gauss;
  double t_before;
  double dx, dy;
  bool clamped;
};

// Front-to-back compositing of one pixel over `list` (positions into
// state.splats, already in depth order). When `record` is non-null the
// contributing splats are appended to it.
void composite_pixel(const RenderState& state, std::span<const std::uint32_t> list, double px,
                     double py, double out_rgb[3], double& out_t,
                     std::vector<Contribution>* record) {
  const RenderSettings& s = state.settings;
  double t = 1.0;
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
  for (std::uint32_t slot = 0; slot < list.size(); ++slot) {
    const std::uint32_t pos = list[slot];
    const RenderState::Splat& sp = state.splats[pos];
    const double dx = px - sp.mx;
    const double dy = py - sp.my;
    const double q = sp.ca * dx * dx + 2.0 * sp.cb * dx * dy + sp.cc * dy * dy;
    if (q > sp.q_cut) continue;
    const double g = std::exp(-0.5 * q);
    double alpha = sp.opacity * g;
    bool clamped = false;
    if (alpha > s.alpha_max) {
      alpha = s.alpha_max;
      clamped = true;
    }
    const double w = alpha * t;
    c0 += sp.color[0] * w;
    c1 += sp.color[1] * w;
    c2 += sp.color[2] * w;
    if (record) record->push_back({slot, pos, alpha, g, t, dx, dy, clamped});
    t *= 1.0 - alpha;
    if (t < s.transmittance_floor) break;
  }
  out_rgb[0] = c0 + t * state.background.x();
  out_rgb[1] = c1 + t * state.background.y();
  out_rgb[2] = c2 + t * state.background.z();
  out_t = t;
}

void check_finite(const GaussianAttributes& a, std::size_t index) {
  const Channels c = a.to_channels();
  for (std::size_t k = 0; k < kChannels; ++k) {
    if (!std::isfinite(c[k])) {
      throw RenderError("non-finite attribute in Gaussian " + std::to_string(index) +
                            " (channel " + std::to_string(k) + ")",
                        index);
    }
  }
}

int thread_count(const RenderSettings& s) {
#ifdef _OPENMP
  return s.threads > 0 ? s.threads : omp_get_max_threads();
#else
  (void)s;
  return 1;
#endif
}

// dR/dr for a unit quaternion r = (w, x, y, z), contracted with dL/dR.
Quat rotation_backward(const Quat& r, const Mat3& dR) {
  const double w = r[0], x = r[1], y = r[2], z = r[3];
  Quat g = Quat::Zero();
  // R00 = 1 - 2(y^2 + z^2)
  g[2] += -4 * y * dR(0, 0);
  g[3] += -4 * z * dR(0, 0);
  // R01 = 2(xy - wz)
  g[1] += 2 * y * dR(0, 1);
  g[2] += 2 * x * dR(0, 1);
  g[0] += -2 * z * dR(0, 1);
  g[3] += -2 * w * dR(0, 1);
  // R02 = 2(xz + wy)
  g[1] += 2 * z * dR(0, 2);
  g[3] += 2 * x * dR(0, 2);
  g[0] += 2 * y * dR(0, 2);
  g[2] += 2 * w * dR(0, 2);
  // R10 = 2(xy + wz)
  g[1] += 2 * y * dR(1, 0);
  g[2] += 2 * x * dR(1, 0);
  g[0] += 2 * z * dR(1, 0);
  g[3] += 2 * w * dR(1, 0);
  // R11 = 1 - 2(x^2 + z^2)
  g[1] += -4 * x * dR(1, 1);
  g[3] += -4 * z * dR(1, 1);
  // R12 = 2(yz - wx)
  g[2] += 2 * z * dR(1, 2);
  g[3] += 2 * y * dR(1, 2);
  g[0] += -2 * x * dR(1, 2);
  g[1] += -2 * w * dR(1, 2);
  // R20 = 2(xz - wy)
  g[1] += 2 * z * dR(2, 0);
  g[3] += 2 * x * dR(2, 0);
  g[0] += -2 * y * dR(2, 0);
  g[2] += -2 * w * dR(2, 0);
  // R21 = 2(yz + wx)
  g[2] += 2 * z * dR(2, 1);
  g[3] += 2 * y * dR(2, 1);
  g[0] += 2 * x * dR(2, 1);
  g[1] += 2 * w * dR(2, 1);
  // R22 = 1 - 2(x^2 + y^2)
  g[1] += -4 * x * dR(2, 2);
  g[2] += -4 * y * dR(2, 2);
  return g;
}

// Jacobian of the perspective map at camera-space point t.
Eigen::Matrix<double, 2, 3> perspective_jacobian(const Vec3& t, const Camera& cam) {
  Eigen::Matrix<double, 2, 3> j;
  const double iz = 1.0 / t.z();
  const double iz2 = iz * iz;
  j << cam.fx * iz, 0.0, -cam.fx * t.x() * iz2, 0.0, cam.fy * iz, -cam.fy * t.y() * iz2;
  return j;
}

}  // namespace

Mat3 rotation_matrix(const Quat& r) {
  const double w = r[0], x = r[1], y = r[2], z = r[3];
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),    //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return m;
}

Mat3 covariance3d(const Vec3& log_scale, const Quat& rotation) {
  const double norm = rotation.norm();
  if (!(norm > 0.0)) throw DegenerateRotation("quaternion has zero norm");
  const Mat3 r = rotation_matrix(rotation / norm);
  const Mat3 m = r * log_scale.array().exp().matrix().asDiagonal();
  return m * m.transpose();
}

std::optional<ProjectedSplat> project(const Vec3& mean, const Mat3& cov, const Camera& cam,
                                      const RenderSettings& settings) {
  const Vec3 t = cam.to_camera(mean);
  if (!(t.z() > settings.near_plane)) return std::nullopt;
  const auto j = perspective_jacobian(t, cam);
  const Eigen::Matrix<double, 2, 3> jw = j * cam.rotation;
  Mat2 cov2d = jw * cov * jw.transpose();
  cov2d(0, 0) += settings.low_pass;
  cov2d(1, 1) += settings.low_pass;
  cov2d(0, 1) = cov2d(1, 0) = 0.5 * (cov2d(0, 1) + cov2d(1, 0));
  if (!(cov2d.determinant() > 0.0)) return std::nullopt;

  ProjectedSplat s;
  s.mean2d = {cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy};
  s.cov2d = cov2d;
  s.depth = t.z();

  const double rx = std::sqrt(kChi2_99 * cov2d(0, 0));
  const double ry = std::sqrt(kChi2_99 * cov2d(1, 1));
  if (s.mean2d.x() + rx < 0.0 || s.mean2d.x() - rx > cam.width || s.mean2d.y() + ry < 0.0 ||
      s.mean2d.y() - ry > cam.height) {
    return std::nullopt;
  }
  return s;
}

GradientBuffer::GradientBuffer(std::size_t n)
    : grads(n, std::array<double, kChannels>{}), viewspace_grad_norm(n, 0.0), visible_count(n, 0) {}

void GradientBuffer::clear() {
  std::fill(grads.begin(), grads.end(), std::array<double, kChannels>{});
  std::fill(viewspace_grad_norm.begin(), viewspace_grad_norm.end(), 0.0);
  std::fill(visible_count.begin(), visible_count.end(), 0u);
}

GradientBuffer& GradientBuffer::operator+=(const GradientBuffer& other) {
  if (other.size() != size()) throw ShapeError("gradient buffer size mismatch");
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t k = 0; k < kChannels; ++k) grads[i][k] += other.grads[i][k];
    viewspace_grad_norm[i] += other.viewspace_grad_norm[i];
    visible_count[i] += other.visible_count[i];
  }
  return *this;
}

std::uint64_t volume_fingerprint(const GaussianVolume& volume) {
  // FNV-1a style mixing over 32-bit words of the stored channels and the mask.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint32_t word) {
    h ^= word;
    h *= 1099511628211ull;
  };
  mix(static_cast<std::uint32_t>(volume.resolution()));
  const auto mask = volume.active_mask();
  for (std::size_t i = 0; i < volume.size(); ++i) {
    const Channels c = volume.at(i).to_channels();
    for (const float v : c) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      mix(bits);
    }
    mix(mask[i]);
  }
  return h;
}

RenderState rasterize(const GaussianVolume& volume, const Camera& cam, const Vec3& background,
                      const RenderSettings& settings) {
  cam.validate();
  if (!(settings.min_alpha > 0.0) || settings.tile_size <= 0) {
    throw ConfigError("render settings require min_alpha > 0 and a positive tile size");
  }
  RenderState st;
  st.camera = cam;
  st.background = background;
  st.settings = settings;
  st.volume_size = volume.size();
  st.volume_hash = volume_fingerprint(volume);

  std::vector<ProjectedSplat> projected;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    if (!volume.active(i)) continue;
    const GaussianAttributes& a = volume.at(i);
    check_finite(a, i);
    const ActivatedGaussian act = activate(a);
    if (!(act.opacity >= settings.min_alpha)) continue;
    const Mat3 cov = covariance3d(a.log_scale.cast<double>(), a.rotation.cast<double>());
    auto splat = project(gaussian_center(volume, i), cov, cam, settings);
    if (!splat) continue;
    splat->color = act.color;
    splat->opacity = act.opacity;
    splat->source_index = i;
    projected.push_back(*splat);
  }
  std::sort(projected.begin(), projected.end(), [](const ProjectedSplat& a, const ProjectedSplat& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.source_index < b.source_index;
  });

  const int ts = settings.tile_size;
  st.tiles_x = (cam.width + ts - 1) / ts;
  st.tiles_y = (cam.height + ts - 1) / ts;
  st.tile_lists.assign(static_cast<std::size_t>(st.tiles_x) * st.tiles_y, {});
  st.splats.reserve(projected.size());

  for (std::size_t k = 0; k < projected.size(); ++k) {
    const ProjectedSplat& p = projected[k];
    const double det = p.cov2d.determinant();
    RenderState::Splat s{};
    s.mx = p.mean2d.x();
    s.my = p.mean2d.y();
    s.ca = p.cov2d(1, 1) / det;
    s.cb = -p.cov2d(0, 1) / det;
    s.cc = p.cov2d(0, 0) / det;
    s.q_cut = 2.0 * std::log(p.opacity / settings.min_alpha);
    s.opacity = p.opacity;
    for (int c = 0; c < 3; ++c) s.color[c] = p.color[c];
    st.splats.push_back(s);

    // Conservative pixel range of the ellipse q <= q_cut (one pixel margin).
    const double rx = std::sqrt(s.q_cut * p.cov2d(0, 0));
    const double ry = std::sqrt(s.q_cut * p.cov2d(1, 1));
    const int x0 = std::max(0, static_cast<int>(std::floor(s.mx - rx - 0.5)) - 1);
    const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(s.mx + rx - 0.5)) + 1);
    const int y0 = std::max(0, static_cast<int>(std::floor(s.my - ry - 0.5)) - 1);
    const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(s.my + ry - 0.5)) + 1);
    if (x0 > x1 || y0 > y1) continue;
    for (int ty = y0 / ts; ty <= y1 / ts; ++ty) {
      for (int tx = x0 / ts; tx <= x1 / ts; ++tx) {
        st.tile_lists[static_cast<std::size_t>(ty) * st.tiles_x + tx].push_back(
            static_cast<std::uint32_t>(k));
      }
    }
  }
  st.projected = std::move(projected);

  st.image = ImageBuffer(cam.width, cam.height, Vec3::Zero(), 1.0);
  const int n_tiles = st.tiles_x * st.tiles_y;
  const int threads = thread_count(settings);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads) if (threads > 1)
  for (int tile = 0; tile < n_tiles; ++tile) {
    const int tx = tile % st.tiles_x;
    const int ty = tile / st.tiles_x;
    const auto& list = st.tile_lists[static_cast<std::size_t>(tile)];
    for (int y = ty * ts; y < std::min(cam.height, (ty + 1) * ts); ++y) {
      for (int x = tx * ts; x < std::min(cam.width, (tx + 1) * ts); ++x) {
        const std::size_t pix = static_cast<std::size_t>(y) * cam.width + x;
        composite_pixel(st, list, x + 0.5, y + 0.5, &st.image.rgb[3 * pix],
                        st.image.transmittance[pix], nullptr);
      }
    }
  }
  return st;
}

ImageBuffer render(const GaussianVolume& volume, const Camera& cam, const Vec3& background,
                   const RenderSettings& settings) {
  return rasterize(volume, cam, background, settings).image;
}

ImageBuffer render_reference(const GaussianVolume& volume, const Camera& cam,
                             const Vec3& background, const RenderSettings& settings) {
  RenderSettings serial = settings;
  serial.threads = 1;
  RenderState st = rasterize(volume, cam, background, serial);
  ImageBuffer img(cam.width, cam.height, Vec3::Zero(), 1.0);
  std::vector<std::uint32_t> all(st.splats.size());
  std::iota(all.begin(), all.end(), 0u);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const std::size_t pix = static_cast<std::size_t>(y) * cam.width + x;
      composite_pixel(st, all, x + 0.5, y + 0.5, &img.rgb[3 * pix], img.transmittance[pix],
                      nullptr);
    }
  }
  return img;
}

GradientBuffer render_backward(const RenderState& st, const GaussianVolume& volume,
                               const Camera& cam, std::span<const double> upstream) {
  if (!(cam == st.camera)) throw StateError("camera does not match the forward state");
  if (volume.size() != st.volume_size || volume_fingerprint(volume) != st.volume_hash) {
    throw StateError("volume does not match the forward state");
  }
  if (upstream.size() != st.image.rgb.size()) {
    throw StateError("upstream gradient has " + std::to_string(upstream.size()) +
                     " entries, expected " + std::to_string(st.image.rgb.size()));
  }

  // Per-splat screen-space partials: mean2d(2), conic(3: a, b, c), opacity, color(3).
  constexpr int kScreen = 9;
  const std::size_t n_splats = st.splats.size();
  const int ts = st.settings.tile_size;
  const int n_tiles = st.tiles_x * st.tiles_y;

  std::vector<std::vector<double>> tile_grads(static_cast<std::size_t>(n_tiles));
  const int threads = thread_count(st.settings);
#pragma omp parallel num_threads(threads) if (threads > 1)
  {
    std::vector<Contribution> record;
#pragma omp for schedule(dynamic, 1)
    for (int tile = 0; tile < n_tiles; ++tile) {
      const auto& list = st.tile_lists[static_cast<std::size_t>(tile)];
      if (list.empty()) continue;
      std::vector<double>& local = tile_grads[static_cast<std::size_t>(tile)];
      local.assign(list.size() * kScreen, 0.0);
      const int tx = tile % st.tiles_x;
      const int ty = tile / st.tiles_x;
      for (int y = ty * ts; y < std::min(cam.height, (ty + 1) * ts); ++y) {
        for (int x = tx * ts; x < std::min(cam.width, (tx + 1) * ts); ++x) {
          const std::size_t pix = static_cast<std::size_t>(y) * cam.width + x;
          const double g0 = upstream[3 * pix];
          const double g1 = upstream[3 * pix + 1];
          const double g2 = upstream[3 * pix + 2];
          if (g0 == 0.0 && g1 == 0.0 && g2 == 0.0) continue;
          record.clear();
          double rgb[3];
          double t_final;
          composite_pixel(st, list, x + 0.5, y + 0.5, rgb, t_final, &record);
          // Color of everything behind the current splat, normalized by its
          // transmittance; starts at the background.
          double r0 = st.background.x(), r1 = st.background.y(), r2 = st.background.z();
          for (auto it = record.rbegin(); it != record.rend(); ++it) {
            const RenderState::Splat& sp = st.splats[it->pos];
            double* out = &local[static_cast<std::size_t>(it->slot) * kScreen];
            const double wgt = it->alpha * it->t_before;
            out[6] += wgt * g0;
            out[7] += wgt * g1;
            out[8] += wgt * g2;
            const double dl_dalpha = it->t_before * ((sp.color[0] - r0) * g0 +
                                                     (sp.color[1] - r1) * g1 +
                                                     (sp.color[2] - r2) * g2);
            r0 = it->alpha * sp.color[0] + (1.0 - it->alpha) * r0;
            r1 = it->alpha * sp.color[1] + (1.0 - it->alpha) * r1;
            r2 = it->alpha * sp.color[2] + (1.0 - it->alpha) * r2;
            if (it->clamped) continue;
            out[5] += it->gauss * dl_dalpha;
            const double dl_dq = -0.5 * it->gauss * sp.opacity * dl_dalpha;
            const double dx = it->dx, dy = it->dy;
            // q = a dx^2 + 2 b dx dy + c dy^2, d = pixel - mean
            out[0] += -dl_dq * 2.0 * (sp.ca * dx + sp.cb * dy);
            out[1] += -dl_dq * 2.0 * (sp.cb * dx + sp.cc * dy);
            out[2] += dl_dq * dx * dx;
            out[3] += dl_dq * 2.0 * dx * dy;
            out[4] += dl_dq * dy * dy;
          }
        }
      }
    }
  }

  // Deterministic reduction in tile order.
  std::vector<double> screen(n_splats * kScreen, 0.0);
  for (int tile = 0; tile < n_tiles; ++tile) {
    const auto& list = st.tile_lists[static_cast<std::size_t>(tile)];
    const auto& local = tile_grads[static_cast<std::size_t>(tile)];
    if (local.empty()) continue;
    for (std::size_t k = 0; k < list.size(); ++k) {
      for (int c = 0; c < kScreen; ++c) screen[list[k] * kScreen + c] += local[k * kScreen + c];
    }
  }

  GradientBuffer out(volume.size());
  const Mat3& w = cam.rotation;
  for (std::size_t k = 0; k < n_splats; ++k) {
    const ProjectedSplat& ps = st.projected[k];
    const std::size_t idx = ps.source_index;
    out.visible_count[idx] = 1;
    const double* sg = &screen[k * kScreen];
    const Vec2 dl_dmean(sg[0], sg[1]);
    out.viewspace_grad_norm[idx] = dl_dmean.norm();

    const GaussianAttributes& a = volume.at(idx);
    const Quat q_raw = a.rotation.cast<double>();
    const double q_norm = q_raw.norm();
    const Quat r = q_raw / q_norm;
    const Mat3 rot = rotation_matrix(r);
    const Vec3 scale = a.log_scale.cast<double>().array().exp();
    const Mat3 m = rot * scale.asDiagonal();
    const Mat3 sigma = m * m.transpose();
    const Vec3 t = cam.to_camera(gaussian_center(volume, idx));
    const auto j = perspective_jacobian(t, cam);
    const Eigen::Matrix<double, 2, 3> jw = j * w;

    // conic -> cov2d: dL/dC = -Omega M Omega with M the symmetric conic gradient.
    Mat2 conic;
    conic << st.splats[k].ca, st.splats[k].cb, st.splats[k].cb, st.splats[k].cc;
    Mat2 dconic;
    dconic << sg[2], 0.5 * sg[3], 0.5 * sg[3], sg[4];
    const Mat2 dcov2d = -conic * dconic * conic;

    const Mat3 dsigma = jw.transpose() * dcov2d * jw;
    const Eigen::Matrix<double, 2, 3> djw = 2.0 * dcov2d * jw * sigma;
    const Eigen::Matrix<double, 2, 3> dj = djw * w.transpose();

    // Camera-space mean: through the Jacobian entries and the projected mean.
    const double iz = 1.0 / t.z();
    const double iz2 = iz * iz;
    const double iz3 = iz2 * iz;
    Vec3 dt = Vec3::Zero();
    dt.x() += dl_dmean.x() * cam.fx * iz;
    dt.y() += dl_dmean.y() * cam.fy * iz;
    dt.z() += -dl_dmean.x() * cam.fx * t.x() * iz2 - dl_dmean.y() * cam.fy * t.y() * iz2;
    dt.z() += -cam.fx * iz2 * dj(0, 0) - cam.fy * iz2 * dj(1, 1);
    dt.x() += -cam.fx * iz2 * dj(0, 2);
    dt.y() += -cam.fy * iz2 * dj(1, 2);
    dt.z() += 2.0 * cam.fx * t.x() * iz3 * dj(0, 2) + 2.0 * cam.fy * t.y() * iz3 * dj(1, 2);
    const Vec3 dmean = w.transpose() * dt;

    const Mat3 dm = 2.0 * dsigma * m;
    const Mat3 ds = rot.transpose() * dm;
    const Mat3 drot = dm * scale.asDiagonal();
    const Quat dr = rotation_backward(r, drot);
    const Quat dq = (dr - r * r.dot(dr)) / q_norm;

    const ActivatedGaussian act = activate(a);
    auto& g = out.grads[idx];
    for (int c = 0; c < 3; ++c) {
      g[channel::kOffset + c] = dmean[c];
      g[channel::kLogScale + c] = ds(c, c) * scale[c];
      g[channel::kColor + c] = sg[6 + c];
    }
    for (int c = 0; c < 4; ++c) g[channel::kRotation + c] = dq[c];
    g[channel::kOpacity] = sg[5] * act.opacity * (1.0 - act.opacity);
  }
  return out;
}

GradientBuffer render_backward(const GaussianVolume& volume, const Camera& cam,
                               const Vec3& background, std::span<const double> upstream,
                               const RenderSettings& settings) {
  const RenderState st = rasterize(volume, cam, background, settings);
  return render_backward(st, volume, cam, upstream);
}

}  // namespace gvfit
