#pragma once

#include <vector>

#include "gvfit/camera.hpp"
#include "gvfit/volume.hpp"

namespace gvfit {

/// Weights of the fitting loss, the image loss and the combined
/// volume-plus-image loss.
struct LossWeights {
  double lambda_l1 = 0.8;       // fitting: L1
  double lambda_ssim = 0.2;     // fitting: 1 - SSIM
  double lambda_offsets = 0.1;  // fitting: offset hinge
  double lambda_image = 0.8;    // image loss: L1 share, (1 - lambda_image) on 1 - SSIM
  double lambda_3d = 1.0;
  double lambda_2d = 0.1;
  double eps_offsets = 1.0 / 31.0;  // world units

  void validate() const;
};

/// Half the lattice spacing of the largest axis.
double default_eps_offsets(std::size_t resolution, const Bounds& bounds);

struct ImageTerms {
  double l1 = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;  // +inf when the images are identical
};

// SSIM uses an 11x11 Gaussian window (sigma 1.5), zero padding and the
// constants C1 = 0.01^2, C2 = 0.03^2, averaged over pixels and channels.
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

ImageTerms image_terms(const ImageBuffer& rendered, const ImageBuffer& target);

double l1_loss(const ImageBuffer& a, const ImageBuffer& b);
double ssim(const ImageBuffer& a, const ImageBuffer& b);
double mse(const ImageBuffer& a, const ImageBuffer& b);
double psnr(const ImageBuffer& a, const ImageBuffer& b);

// d/da of the scalar terms; layout matches ImageBuffer::rgb.
std::vector<double> l1_gradient(const ImageBuffer& a, const ImageBuffer& b);
std::vector<double> ssim_gradient(const ImageBuffer& a, const ImageBuffer& b);

/// Mean over active Gaussians and axes of max(0, |offset| - eps).
double offsets_reg(const GaussianVolume& volume, double eps_offsets);
/// d offsets_reg / d offset, N^3 * 3 entries (zero for inactive points).
std::vector<double> offsets_reg_gradient(const GaussianVolume& volume, double eps_offsets);

struct FittingLoss {
  double value = 0.0;
  double l1 = 0.0;
  double ssim = 0.0;
  double offsets = 0.0;
  std::vector<double> image_grad;   // dL/d rendered rgb
  std::vector<double> offset_grad;  // dL/d offset (N^3 * 3), regularizer only
};

/// lambda_l1 * L1 + lambda_ssim * (1 - SSIM) + lambda_offsets * offsets_reg.
FittingLoss fitting_loss(const ImageBuffer& rendered, const ImageBuffer& target,
                         const GaussianVolume& volume, const LossWeights& w);

struct Stage2Loss {
  double value = 0.0;
  double loss_3d = 0.0;
  double loss_2d = 0.0;
  std::vector<double> pred_grad;   // N^3 * kChannels, stored channel order
  std::vector<double> image_grad;
};

/// lambda * L1 + (1 - lambda) * (1 - SSIM).
double image_loss(const ImageBuffer& rendered, const ImageBuffer& target, double lambda);

/// lambda_3d * MSE(raw channels) + lambda_2d * image_loss.
Stage2Loss stage2_losses(const GaussianVolume& pred, const GaussianVolume& gt,
                         const ImageBuffer& rendered, const ImageBuffer& target,
                         const LossWeights& w);

}  // namespace gvfit
