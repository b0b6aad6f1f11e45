#include "gvfit/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "gvfit/error.hpp"

namespace gvfit {

DiffusionSchedule build_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("diffusion schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("diffusion schedule requires 0 < beta_start <= beta_end < 1");
  }
  DiffusionSchedule s;
  s.beta.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
    s.beta[t] = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - s.beta[t];
    s.alpha_bar[t] = prod;
  }
  return s;
}

Lattice q_sample(std::span<const double> x0, std::size_t t, std::span<const double> noise,
                 const DiffusionSchedule& schedule) {
  if (t >= schedule.steps()) {
    throw RangeError("timestep " + std::to_string(t) + " outside schedule of " +
                     std::to_string(schedule.steps()) + " steps");
  }
  if (noise.size() != x0.size()) throw ShapeError("noise and x0 differ in size");
  const double a = std::sqrt(schedule.alpha_bar[t]);
  const double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
  Lattice out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * noise[i];
  return out;
}

double mse_noise_loss(const Denoiser& denoiser, std::span<const double> x0, std::size_t t,
                      std::span<const double> noise, std::span<const double> cond,
                      const DiffusionSchedule& schedule) {
  const Lattice xt = q_sample(x0, t, noise, schedule);
  const Lattice pred = denoiser(xt, t, cond);
  if (pred.size() != noise.size()) {
    throw ContractError("denoiser returned " + std::to_string(pred.size()) +
                        " values for a lattice of " + std::to_string(noise.size()));
  }
  if (noise.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - noise[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

Lattice gaussian_noise(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Lattice out(count);
  for (double& v : out) v = normal(rng);
  return out;
}

Lattice sample_lattice(const Denoiser& denoiser, std::span<const double> cond,
                       const DiffusionSchedule& schedule, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Lattice x(count);
  for (double& v : x) v = normal(rng);

  for (std::size_t step = schedule.steps(); step-- > 0;) {
    const Lattice eps = denoiser(x, step, cond);
    if (eps.size() != count) {
      throw ContractError("denoiser returned " + std::to_string(eps.size()) +
                          " values for a lattice of " + std::to_string(count));
    }
    const double beta = schedule.beta[step];
    const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    const double eps_coef = beta / std::sqrt(1.0 - schedule.alpha_bar[step]);
    const double sigma = step > 0 ? std::sqrt(beta) : 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      x[i] = inv_sqrt_alpha * (x[i] - eps_coef * eps[i]);
      if (sigma > 0.0) x[i] += sigma * normal(rng);
    }
  }
  return x;
}

Lattice normalize_gdf(const GDFVolume& gdf) {
  const double diag = gdf.bounds.diagonal();
  Lattice out(gdf.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gdf.values[i] / diag;
  return out;
}

GDFVolume denormalize_gdf(std::span<const double> lattice, std::size_t resolution,
                          const Bounds& bounds) {
  if (lattice.size() != resolution * resolution * resolution) {
    throw ShapeError("lattice size does not match resolution " + std::to_string(resolution));
  }
  const double diag = bounds.diagonal();
  GDFVolume out{resolution, bounds, std::vector<float>(lattice.size())};
  for (std::size_t i = 0; i < lattice.size(); ++i) {
    out.values[i] = static_cast<float>(std::max(0.0, lattice[i] * diag));
  }
  return out;
}

GDFVolume sample(const Denoiser& denoiser, std::span<const double> cond,
                 const DiffusionSchedule& schedule, std::size_t resolution, const Bounds& bounds,
                 std::uint64_t seed) {
  const Lattice x =
      sample_lattice(denoiser, cond, schedule, resolution * resolution * resolution, seed);
  return denormalize_gdf(x, resolution, bounds);
}

Denoiser make_x0_oracle_denoiser(Lattice x0, const DiffusionSchedule& schedule) {
  return [x0 = std::move(x0), alpha_bar = schedule.alpha_bar](
             std::span<const double> noisy, std::size_t t, std::span<const double>) {
    if (noisy.size() != x0.size()) throw ContractError("oracle denoiser: lattice size mismatch");
    const double a = std::sqrt(alpha_bar.at(t));
    const double b = std::sqrt(1.0 - alpha_bar.at(t));
    Lattice eps(noisy.size());
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (noisy[i] - a * x0[i]) / b;
    return eps;
  };
}

Denoiser make_zero_denoiser() {
  return [](std::span<const double> noisy, std::size_t, std::span<const double>) {
    return Lattice(noisy.size(), 0.0);
  };
}

}  // namespace gvfit
