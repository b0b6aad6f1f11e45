#include "gvfit/objective.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "gvfit/error.hpp"

namespace gvfit {
namespace {

void require_same_shape(const ImageBuffer& a, const ImageBuffer& b) {
  if (a.width != b.width || a.height != b.height || a.rgb.size() != b.rgb.size()) {
    throw ShapeError("image dimensions differ: " + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height));
  }
}

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable "same" Gaussian filter with zero padding on a single plane.
std::vector<double> blur(const std::vector<double>& src, int width, int height) {
  static const auto win = gaussian_window();
  constexpr int r = kSsimWindow / 2;
  std::vector<double> tmp(src.size(), 0.0);
  std::vector<double> out(src.size(), 0.0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx < 0 || xx >= width) continue;
        acc += win[k + r] * src[static_cast<std::size_t>(y) * width + xx];
      }
      tmp[static_cast<std::size_t>(y) * width + x] = acc;
    }
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy < 0 || yy >= height) continue;
        acc += win[k + r] * tmp[static_cast<std::size_t>(yy) * width + x];
      }
      out[static_cast<std::size_t>(y) * width + x] = acc;
    }
  }
  return out;
}

std::vector<double> plane(const ImageBuffer& img, int c) {
  std::vector<double> p(img.pixels());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = img.rgb[3 * i + c];
  return p;
}

struct SsimStats {
  std::vector<double> mu_a, mu_b, e_aa, e_bb, e_ab;
};

SsimStats ssim_stats(const std::vector<double>& a, const std::vector<double>& b, int w, int h) {
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  return {blur(a, w, h), blur(b, w, h), blur(aa, w, h), blur(bb, w, h), blur(ab, w, h)};
}

}  // namespace

void LossWeights::validate() const {
  if (lambda_l1 < 0 || lambda_ssim < 0 || lambda_offsets < 0 || lambda_3d < 0 || lambda_2d < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!(lambda_image >= 0.0 && lambda_image <= 1.0)) {
    throw ConfigError("lambda_image must lie in [0, 1]");
  }
  if (!(eps_offsets > 0.0)) throw ConfigError("eps_offsets must be positive");
}

double default_eps_offsets(std::size_t resolution, const Bounds& bounds) {
  if (resolution < 2) throw ConfigError("volume resolution must be >= 2");
  return bounds.extent().maxCoeff() / (2.0 * static_cast<double>(resolution - 1));
}

double l1_loss(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b);
  if (a.rgb.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) acc += std::abs(a.rgb[i] - b.rgb[i]);
  return acc / static_cast<double>(a.rgb.size());
}

std::vector<double> l1_gradient(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b);
  std::vector<double> g(a.rgb.size(), 0.0);
  const double inv = a.rgb.empty() ? 0.0 : 1.0 / static_cast<double>(a.rgb.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = a.rgb[i] - b.rgb[i];
    g[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
  }
  return g;
}

double mse(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b);
  if (a.rgb.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = a.rgb[i] - b.rgb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.rgb.size());
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(m);
}

namespace {

// SSIM value and, when `grad` is non-null, d SSIM / d a.
double ssim_impl(const ImageBuffer& a, const ImageBuffer& b, std::vector<double>* grad) {
  require_same_shape(a, b);
  if (grad) grad->assign(a.rgb.size(), 0.0);
  if (a.rgb.empty()) return 1.0;
  const std::size_t n = a.pixels();
  const double inv = 1.0 / static_cast<double>(3 * n);
  double total = 0.0;
  std::vector<double> d_mu, d_eaa, d_eab;
  if (grad) {
    d_mu.resize(n);
    d_eaa.resize(n);
    d_eab.resize(n);
  }
  for (int c = 0; c < 3; ++c) {
    const std::vector<double> pa = plane(a, c);
    const std::vector<double> pb = plane(b, c);
    const SsimStats s = ssim_stats(pa, pb, a.width, a.height);
    for (std::size_t i = 0; i < n; ++i) {
      const double ma = s.mu_a[i], mb = s.mu_b[i];
      const double va = s.e_aa[i] - ma * ma;
      const double vb = s.e_bb[i] - mb * mb;
      const double cov = s.e_ab[i] - ma * mb;
      const double a1 = 2 * ma * mb + kSsimC1;
      const double a2 = 2 * cov + kSsimC2;
      const double b1 = ma * ma + mb * mb + kSsimC1;
      const double b2 = va + vb + kSsimC2;
      const double val = a1 * a2 / (b1 * b2);
      total += val;
      if (grad) {
        d_mu[i] = inv * ((2 * mb * a2 - 2 * mb * a1) / (b1 * b2) -
                         val * (2 * ma / b1 - 2 * ma / b2));
        d_eaa[i] = inv * (-val / b2);
        d_eab[i] = inv * (2 * a1 / (b1 * b2));
      }
    }
    if (!grad) continue;
    // The zero-padded symmetric filter is its own adjoint.
    const std::vector<double> g_mu = blur(d_mu, a.width, a.height);
    const std::vector<double> g_aa = blur(d_eaa, a.width, a.height);
    const std::vector<double> g_ab = blur(d_eab, a.width, a.height);
    for (std::size_t i = 0; i < n; ++i) {
      (*grad)[3 * i + c] = g_mu[i] + 2.0 * pa[i] * g_aa[i] + pb[i] * g_ab[i];
    }
  }
  return total * inv;
}

}  // namespace

double ssim(const ImageBuffer& a, const ImageBuffer& b) { return ssim_impl(a, b, nullptr); }

std::vector<double> ssim_gradient(const ImageBuffer& a, const ImageBuffer& b) {
  std::vector<double> g;
  ssim_impl(a, b, &g);
  return g;
}

ImageTerms image_terms(const ImageBuffer& rendered, const ImageBuffer& target) {
  require_same_shape(rendered, target);
  return {l1_loss(rendered, target), ssim(rendered, target), psnr(rendered, target)};
}

double offsets_reg(const GaussianVolume& volume, double eps) {
  if (!(eps > 0.0)) throw ConfigError("eps_offsets must be positive");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    if (!volume.active(i)) continue;
    const Vec3f& o = volume.at(i).offset;
    for (int k = 0; k < 3; ++k) acc += std::max(0.0, std::abs(static_cast<double>(o[k])) - eps);
    ++count;
  }
  return count == 0 ? 0.0 : acc / static_cast<double>(3 * count);
}

std::vector<double> offsets_reg_gradient(const GaussianVolume& volume, double eps) {
  if (!(eps > 0.0)) throw ConfigError("eps_offsets must be positive");
  std::vector<double> g(volume.size() * 3, 0.0);
  const std::size_t count = volume.active_count();
  if (count == 0) return g;
  const double inv = 1.0 / static_cast<double>(3 * count);
  for (std::size_t i = 0; i < volume.size(); ++i) {
    if (!volume.active(i)) continue;
    const Vec3f& o = volume.at(i).offset;
    for (int k = 0; k < 3; ++k) {
      const double v = o[k];
      if (std::abs(v) > eps) g[3 * i + k] = v > 0.0 ? inv : -inv;
    }
  }
  return g;
}

FittingLoss fitting_loss(const ImageBuffer& rendered, const ImageBuffer& target,
                         const GaussianVolume& volume, const LossWeights& w) {
  w.validate();
  FittingLoss out;
  out.l1 = l1_loss(rendered, target);
  std::vector<double> gs;
  if (w.lambda_ssim != 0.0) {
    out.ssim = ssim_impl(rendered, target, &gs);
  } else {
    out.ssim = ssim(rendered, target);
  }
  out.offsets = offsets_reg(volume, w.eps_offsets);
  out.value = w.lambda_l1 * out.l1 + w.lambda_ssim * (1.0 - out.ssim) +
              w.lambda_offsets * out.offsets;

  out.image_grad = l1_gradient(rendered, target);
  for (double& g : out.image_grad) g *= w.lambda_l1;
  if (w.lambda_ssim != 0.0) {
    for (std::size_t i = 0; i < gs.size(); ++i) out.image_grad[i] -= w.lambda_ssim * gs[i];
  }
  out.offset_grad = offsets_reg_gradient(volume, w.eps_offsets);
  for (double& g : out.offset_grad) g *= w.lambda_offsets;
  return out;
}

double image_loss(const ImageBuffer& rendered, const ImageBuffer& target, double lambda) {
  return lambda * l1_loss(rendered, target) + (1.0 - lambda) * (1.0 - ssim(rendered, target));
}

Stage2Loss stage2_losses(const GaussianVolume& pred, const GaussianVolume& gt,
                         const ImageBuffer& rendered, const ImageBuffer& target,
                         const LossWeights& w) {
  w.validate();
  if (pred.resolution() != gt.resolution()) {
    throw ShapeError("volume resolutions differ: " + std::to_string(pred.resolution()) +
                     " vs " + std::to_string(gt.resolution()));
  }
  require_same_shape(rendered, target);
  Stage2Loss out;
  const std::size_t n = pred.size();
  const double inv = 1.0 / static_cast<double>(n * kChannels);
  out.pred_grad.assign(n * kChannels, 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Channels p = pred.at(i).to_channels();
    const Channels g = gt.at(i).to_channels();
    for (std::size_t k = 0; k < kChannels; ++k) {
      const double d = static_cast<double>(p[k]) - static_cast<double>(g[k]);
      acc += d * d;
      out.pred_grad[i * kChannels + k] = w.lambda_3d * 2.0 * d * inv;
    }
  }
  out.loss_3d = acc * inv;
  std::vector<double> gs;
  const double s = ssim_impl(rendered, target, &gs);
  out.loss_2d = w.lambda_image * l1_loss(rendered, target) + (1.0 - w.lambda_image) * (1.0 - s);
  out.value = w.lambda_3d * out.loss_3d + w.lambda_2d * out.loss_2d;

  out.image_grad = l1_gradient(rendered, target);
  for (std::size_t i = 0; i < gs.size(); ++i) {
    out.image_grad[i] = w.lambda_2d * (w.lambda_image * out.image_grad[i] -
                                       (1.0 - w.lambda_image) * gs[i]);
  }
  return out;
}

}  // namespace gvfit
