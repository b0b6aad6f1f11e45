#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "gvfit/camera.hpp"
#include "gvfit/error.hpp"
#include "gvfit/objective.hpp"
#include "gvfit/render.hpp"
#include "gvfit/volume.hpp"

namespace gvfit {

struct LearningRates {
  double offset = 1e-3;
  double log_scale = 1e-2;
  double rotation = 5e-3;
  double opacity = 5e-2;
  double color = 1e-2;

  double for_channel(std::size_t channel) const;
  LearningRates scaled(double factor) const;
};

/// Everything that controls a fitting run.
///
/// `refine_end` defaults to 0.8 * total_iters, `eps_offsets` to half a voxel
/// and `eps_pool` to two voxel spacings. Setting `prune_opacity` to 0 and
/// `densify_grad` to +inf disables the candidate pool entirely.
struct FitConfig {
  std::size_t resolution = 32;
  Bounds bounds;

  int total_iters = 3000;
  int refine_interval = 100;
  int refine_start = 500;
  std::optional<int> refine_end;

  double prune_opacity = 0.005;  // tau_p, on activated opacity
  double densify_grad = 2e-6;    // tau_d, mean view-space gradient norm in pixels

  LearningRates lr;
  // Every rate decays exponentially to lr * lr_final_scale at total_iters.
  double lr_final_scale = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-15;

  std::optional<double> eps_offsets;
  std::optional<double> eps_pool;
  bool optimize_offsets = true;

  LossWeights loss;
  RenderSettings render;
  std::uint64_t seed = 0;

  int resolved_refine_end() const;
  double resolved_eps_offsets() const;
  double resolved_eps_pool() const;
  // Throws ConfigError.
  void validate() const;
};

/// Adam moments for every grid point (all N^3, active or not).
struct AdamState {
  std::vector<std::array<double, kChannels>> m;
  std::vector<std::array<double, kChannels>> v;
  std::int64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n)
      : m(n, std::array<double, kChannels>{}), v(n, std::array<double, kChannels>{}) {}
  void reset(std::size_t index);
};

/// Initial log-scale: std-dev of half the lattice spacing.
double default_log_scale(std::size_t resolution, const Bounds& bounds);

/// All N^3 points active with zero offsets, opacity 0.1, mid-gray color,
/// identity rotation. Pool empty.
std::pair<GaussianVolume, CandidatePool> initialize(std::size_t resolution,
                                                    const Bounds& bounds = {});

/// One Adam update on active points. With `update_offsets` false the
/// offset channels are left untouched.
void adam_step(GaussianVolume& volume, const GradientBuffer& grads, AdamState& state,
               const FitConfig& cfg, bool update_offsets = true);

/// Active indices with activated opacity < tau_p.
std::vector<std::size_t> prune_select(const GaussianVolume& volume, double tau_p);

/// Active indices whose mean accumulated view-space gradient norm exceeds tau_d.
std::vector<std::size_t> densify_select(const GaussianVolume& volume, const GradientBuffer& history,
                                        double tau_d);

struct ExchangeReport {
  std::vector<std::size_t> pruned;
  // (densified source, activated pool index)
  std::vector<std::pair<std::size_t, std::size_t>> cloned;
  std::size_t skipped = 0;
};

/// Moves G_p into the pool, then activates for each densified point the
/// nearest pooled grid point within `eps_pool` of its center as a clone.
/// The clone's offset is clamped to |offset_k| <= max_offset.
ExchangeReport pool_exchange(GaussianVolume& volume, CandidatePool& pool,
                             const std::vector<std::size_t>& pruned,
                             const std::vector<std::size_t>& densified, double max_offset,
                             double eps_pool, std::mt19937_64& rng);

/// Reactivates every pooled point with zero offset, opacity 0.01 and the
/// default scale. Returns the reactivated indices.
std::vector<std::size_t> release_pool(GaussianVolume& volume, CandidatePool& pool);

struct MetricsRow {
  int iteration = 0;
  double loss = 0.0;
  double psnr = 0.0;
  std::size_t active_count = 0;
};

enum class FitEventKind { kIteration, kRefinement, kRelease };

struct FitEvent {
  FitEventKind kind;
  int iteration;
  const GaussianVolume& volume;
  const CandidatePool& pool;
  const GradientBuffer& grads;  // gradients of this iteration
  const ExchangeReport* exchange = nullptr;
};

using FitObserver = std::function<void(const FitEvent&)>;

struct FitResult {
  GaussianVolume volume;
  CandidatePool pool;
  std::vector<MetricsRow> log;
};

/// Raised when the loss stops being finite. Carries the volume as it was at
/// the failing iteration.
class FitAborted : public Error {
 public:
  FitAborted(const std::string& what, int iteration, std::size_t view,
             std::shared_ptr<const GaussianVolume> snapshot)
      : Error(what), iteration_(iteration), view_(view), snapshot_(std::move(snapshot)) {}
  int iteration() const noexcept { return iteration_; }
  std::size_t view() const noexcept { return view_; }
  const GaussianVolume& snapshot() const { return *snapshot_; }

 private:
  int iteration_;
  std::size_t view_;
  std::shared_ptr<const GaussianVolume> snapshot_;
};

/// Fits a GaussianVolume to posed images with the candidate pool strategy.
FitResult fit(const PosedImageSet& dataset, const FitConfig& cfg,
              const FitObserver& observer = {});

/// Mean PSNR/SSIM of `volume` over the views of `dataset`.
struct EvalResult {
  double psnr = 0.0;
  double ssim = 0.0;
  std::vector<ImageTerms> per_view;
};
EvalResult evaluate(const GaussianVolume& volume, const PosedImageSet& dataset,
                    const RenderSettings& settings = {});

}  // namespace gvfit
