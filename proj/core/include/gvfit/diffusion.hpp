#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gvfit/gdf.hpp"

namespace gvfit {

using Lattice = std::vector<double>;

/// Linear beta schedule and its cumulative products.
struct DiffusionSchedule {
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  std::size_t steps() const noexcept { return beta.size(); }
};

/// Noise predictor: (noisy lattice, timestep, condition) -> predicted noise.
/// Must return a lattice of the input's size.
using Denoiser =
    std::function<Lattice(std::span<const double> noisy, std::size_t t, std::span<const double> cond)>;

/// beta linearly interpolated from beta_start to beta_end over `steps`.
DiffusionSchedule build_schedule(std::size_t steps, double beta_start = 1e-4,
                                 double beta_end = 2e-2);

/// x_t = sqrt(alpha_bar[t]) x0 + sqrt(1 - alpha_bar[t]) noise.
Lattice q_sample(std::span<const double> x0, std::size_t t, std::span<const double> noise,
                 const DiffusionSchedule& schedule);

/// MSE between the denoiser's prediction on q_sample(x0, t, noise) and noise.
double mse_noise_loss(const Denoiser& denoiser, std::span<const double> x0, std::size_t t,
                      std::span<const double> noise, std::span<const double> cond,
                      const DiffusionSchedule& schedule);

/// Ancestral reverse sampling from pure noise into a lattice of `count`
/// elements, in normalized units. Deterministic in `seed`.
Lattice sample_lattice(const Denoiser& denoiser, std::span<const double> cond,
                       const DiffusionSchedule& schedule, std::size_t count, std::uint64_t seed);

/// Sample a GDF: normalized lattice -> world units, clamped to >= 0.
GDFVolume sample(const Denoiser& denoiser, std::span<const double> cond,
                 const DiffusionSchedule& schedule, std::size_t resolution, const Bounds& bounds,
                 std::uint64_t seed);

/// GDF values divided by the bounds diagonal, and back.
Lattice normalize_gdf(const GDFVolume& gdf);
GDFVolume denormalize_gdf(std::span<const double> lattice, std::size_t resolution,
                          const Bounds& bounds);

/// Predicts the exact noise that maps x0 to the given x_t.
Denoiser make_x0_oracle_denoiser(Lattice x0, const DiffusionSchedule& schedule);
Denoiser make_zero_denoiser();

/// Unit-variance Gaussian noise of length `count`.
Lattice gaussian_noise(std::size_t count, std::uint64_t seed);

}  // namespace gvfit
