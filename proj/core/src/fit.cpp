#include "gvfit/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "gvfit/error.hpp"

namespace gvfit {
namespace {

constexpr double kInitialOpacity = 0.1;
constexpr double kReleasedOpacity = 0.01;

const char* channel_name(std::size_t k) {
  if (k < channel::kLogScale) return "offset";
  if (k < channel::kRotation) return "log_scale";
  if (k < channel::kOpacity) return "rotation";
  if (k < channel::kColor) return "opacity_logit";
  return "color";
}

bool is_refinement(int done, int start, int end, int interval) {
  return done >= start && done < end && done % interval == 0;
}

}  // namespace

double LearningRates::for_channel(std::size_t k) const {
  if (k < channel::kLogScale) return offset;
  if (k < channel::kRotation) return log_scale;
  if (k < channel::kOpacity) return rotation;
  if (k < channel::kColor) return opacity;
  return color;
}

int FitConfig::resolved_refine_end() const {
  return refine_end.value_or(static_cast<int>(0.8 * total_iters));
}

double FitConfig::resolved_eps_offsets() const {
  return eps_offsets.value_or(default_eps_offsets(resolution, bounds));
}

LearningRates LearningRates::scaled(double factor) const {
  return {offset * factor, log_scale * factor, rotation * factor, opacity * factor, color * factor};
}

double FitConfig::resolved_eps_pool() const {
  if (eps_pool) return *eps_pool;
  if (resolution < 2) throw ConfigError("volume resolution must be >= 2");
  return 2.0 * bounds.extent().maxCoeff() / static_cast<double>(resolution - 1);
}

void FitConfig::validate() const {
  if (resolution < 2) throw ConfigError("resolution must be >= 2");
  if (total_iters < 0) throw ConfigError("total_iters must be non-negative");
  if (total_iters > 0) {
    const int end = resolved_refine_end();
    if (!(refine_start > 0 && refine_start <= end && end <= total_iters)) {
      throw ConfigError("refinement schedule requires 0 < refine_start <= refine_end <= total_iters (got " +
                        std::to_string(refine_start) + ", " + std::to_string(end) + ", " +
                        std::to_string(total_iters) + ")");
    }
    if (refine_interval <= 0) throw ConfigError("refine_interval must be positive");
  }
  if (!(prune_opacity >= 0.0)) throw ConfigError("prune_opacity must be >= 0");
  if (!(densify_grad > 0.0)) throw ConfigError("densify_grad must be > 0");
  for (std::size_t k : {channel::kOffset, channel::kLogScale, channel::kRotation,
                        channel::kOpacity, channel::kColor}) {
    if (!(lr.for_channel(k) > 0.0)) {
      throw ConfigError(std::string("learning rate for ") + channel_name(k) + " must be > 0");
    }
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(lr_final_scale > 0.0 && lr_final_scale <= 1.0)) {
    throw ConfigError("lr_final_scale must lie in (0, 1]");
  }
  if (!(resolved_eps_offsets() > 0.0)) throw ConfigError("eps_offsets must be > 0");
  if (!(resolved_eps_pool() > 0.0)) throw ConfigError("eps_pool must be > 0");
  LossWeights w = loss;
  w.eps_offsets = resolved_eps_offsets();
  w.validate();
}

void AdamState::reset(std::size_t index) {
  m.at(index) = {};
  v.at(index) = {};
}

double default_log_scale(std::size_t resolution, const Bounds& bounds) {
  if (resolution < 2) throw ConfigError("volume resolution must be >= 2");
  return std::log(0.5 * bounds.extent().minCoeff() / static_cast<double>(resolution - 1));
}

std::pair<GaussianVolume, CandidatePool> initialize(std::size_t resolution, const Bounds& bounds) {
  if (resolution < 2) throw ConfigError("volume resolution must be >= 2, got " + std::to_string(resolution));
  GaussianVolume volume(resolution, bounds);
  const float ls = static_cast<float>(default_log_scale(resolution, bounds));
  const float op = static_cast<float>(logit(kInitialOpacity));
  for (GaussianAttributes& a : volume.attributes()) {
    a.offset.setZero();
    a.log_scale.setConstant(ls);
    a.rotation = Vec4f(1.0f, 0.0f, 0.0f, 0.0f);
    a.opacity_logit = op;
    a.color.setConstant(0.5f);
  }
  return {std::move(volume), CandidatePool{}};
}

void adam_step(GaussianVolume& volume, const GradientBuffer& grads, AdamState& state,
               const FitConfig& cfg, bool update_offsets) {
  if (grads.size() != volume.size() || state.m.size() != volume.size()) {
    throw ShapeError("gradient/optimizer state size does not match the volume");
  }
  for (std::size_t i = 0; i < volume.size(); ++i) {
    const auto& g = grads.grads[i];
    for (std::size_t k = 0; k < kChannels; ++k) {
      if (!std::isfinite(g[k])) {
        throw OptimizerError(std::string("non-finite gradient in channel ") + channel_name(k) +
                             " of Gaussian " + std::to_string(i));
      }
      if (!volume.active(i) && g[k] != 0.0) {
        throw ContractError("nonzero gradient on deactivated Gaussian " + std::to_string(i));
      }
    }
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const std::size_t first = update_offsets ? 0 : channel::kLogScale;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    if (!volume.active(i)) continue;
    const auto& g = grads.grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    Channels c = volume.at(i).to_channels();
    for (std::size_t k = first; k < kChannels; ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      const double step = cfg.lr.for_channel(k) * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      c[k] = static_cast<float>(static_cast<double>(c[k]) - step);
    }
    volume.at(i) = GaussianAttributes::from_channels(c);
  }
}

std::vector<std::size_t> prune_select(const GaussianVolume& volume, double tau_p) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    if (volume.active(i) && sigmoid(volume.at(i).opacity_logit) < tau_p) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> densify_select(const GaussianVolume& volume, const GradientBuffer& history,
                                        double tau_d) {
  if (history.size() != volume.size()) throw ShapeError("gradient history size does not match the volume");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    if (!volume.active(i) || history.visible_count[i] == 0) continue;
    const double mean = history.viewspace_grad_norm[i] / history.visible_count[i];
    if (mean > tau_d) out.push_back(i);
  }
  return out;
}

ExchangeReport pool_exchange(GaussianVolume& volume, CandidatePool& pool,
                             const std::vector<std::size_t>& pruned,
                             const std::vector<std::size_t>& densified, double max_offset,
                             double eps_pool, std::mt19937_64& rng) {
  for (const std::size_t i : pruned) {
    if (i >= volume.size() || !volume.active(i)) {
      throw ContractError("pruned index " + std::to_string(i) + " is not active");
    }
  }
  {
    std::vector<std::size_t> a = pruned, b = densified;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::size_t> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    if (!both.empty()) {
      throw ContractError("index " + std::to_string(both.front()) +
                          " is both pruned and densified");
    }
  }
  for (const std::size_t i : densified) {
    if (i >= volume.size() || !volume.active(i)) {
      throw ContractError("densified index " + std::to_string(i) + " is not active");
    }
  }

  ExchangeReport report;
  for (const std::size_t i : pruned) {
    volume.set_active(i, false);
    pool.deactivated.insert(i);
    report.pruned.push_back(i);
  }

  const std::size_t n = volume.resolution();
  const Vec3 lo = volume.bounds().lo;
  const Vec3 h = volume.spacing();
  const double eps2 = eps_pool * eps_pool;
  std::normal_distribution<double> normal(0.0, 1.0);

  for (const std::size_t d : densified) {
    const Vec3 center = gaussian_center(volume, d);
    std::size_t range_lo[3], range_hi[3];
    bool empty = false;
    for (int k = 0; k < 3; ++k) {
      const double a = std::ceil((center[k] - eps_pool - lo[k]) / h[k]);
      const double b = std::floor((center[k] + eps_pool - lo[k]) / h[k]);
      const double a_c = std::max(a, 0.0);
      const double b_c = std::min(b, static_cast<double>(n - 1));
      if (a_c > b_c) {
        empty = true;
        break;
      }
      range_lo[k] = static_cast<std::size_t>(a_c);
      range_hi[k] = static_cast<std::size_t>(b_c);
    }
    std::size_t best = volume.size();
    double best_d2 = std::numeric_limits<double>::infinity();
    if (!empty) {
      for (std::size_t x = range_lo[0]; x <= range_hi[0]; ++x) {
        for (std::size_t y = range_lo[1]; y <= range_hi[1]; ++y) {
          for (std::size_t z = range_lo[2]; z <= range_hi[2]; ++z) {
            const std::size_t j = grid_index({x, y, z}, n);
            if (volume.active(j)) continue;
            const double d2 = (grid_position(j, volume) - center).squaredNorm();
            if (d2 <= eps2 && d2 < best_d2) {
              best_d2 = d2;
              best = j;
            }
          }
        }
      }
    }
    if (best == volume.size()) {
      ++report.skipped;
      continue;
    }

    GaussianAttributes& src = volume.at(d);
    const ActivatedGaussian act = activate(src);
    const double jitter = 0.25 * act.scale.mean();
    Vec3 target = center;
    for (int k = 0; k < 3; ++k) target[k] += jitter * normal(rng);
    const float half = static_cast<float>(logit(0.5 * act.opacity));
    src.opacity_logit = half;

    GaussianAttributes clone = src;
    const Vec3 p = grid_position(best, volume);
    for (int k = 0; k < 3; ++k) {
      clone.offset[k] = static_cast<float>(std::clamp(target[k] - p[k], -max_offset, max_offset));
    }
    volume.at(best) = clone;
    volume.set_active(best, true);
    pool.deactivated.erase(best);
    report.cloned.emplace_back(d, best);
  }
  return report;
}

std::vector<std::size_t> release_pool(GaussianVolume& volume, CandidatePool& pool) {
  const float ls = static_cast<float>(default_log_scale(volume.resolution(), volume.bounds()));
  const float op = static_cast<float>(logit(kReleasedOpacity));
  std::vector<std::size_t> released(pool.deactivated.begin(), pool.deactivated.end());
  for (const std::size_t i : released) {
    GaussianAttributes& a = volume.at(i);
    a.offset.setZero();
    a.log_scale.setConstant(ls);
    a.opacity_logit = op;
    volume.set_active(i, true);
  }
  pool.deactivated.clear();
  return released;
}

FitResult fit(const PosedImageSet& dataset, const FitConfig& cfg, const FitObserver& observer) {
  if (dataset.views.empty()) throw ConfigError("dataset contains no views");
  cfg.validate();
  for (std::size_t v = 0; v < dataset.views.size(); ++v) {
    const PosedImage& view = dataset.views[v];
    view.camera.validate();
    if (view.image.width != view.camera.width || view.image.height != view.camera.height) {
      throw ConfigError("image " + std::to_string(v) + " does not match its camera dimensions");
    }
  }

  auto [volume, pool] = initialize(cfg.resolution, cfg.bounds);
  FitResult result{std::move(volume), std::move(pool), {}};
  GaussianVolume& vol = result.volume;
  CandidatePool& cp = result.pool;
  if (cfg.total_iters == 0) return result;

  LossWeights weights = cfg.loss;
  weights.eps_offsets = cfg.resolved_eps_offsets();
  const double max_offset = cfg.optimize_offsets ? weights.eps_offsets : 0.0;
  const double eps_pool = cfg.resolved_eps_pool();
  const int refine_end = cfg.resolved_refine_end();

  AdamState adam(vol.size());
  FitConfig stepping = cfg;
  GradientBuffer history(vol.size());
  std::mt19937_64 rng(cfg.seed);

  std::vector<std::size_t> order(dataset.views.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  result.log.reserve(static_cast<std::size_t>(cfg.total_iters));
  for (int it = 0; it < cfg.total_iters; ++it) {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t view_index = order[cursor++];
    const PosedImage& view = dataset.views[view_index];

    const RenderState state = rasterize(vol, view.camera, dataset.background, cfg.render);
    FittingLoss loss = fitting_loss(state.image, view.image, vol, weights);
    if (!std::isfinite(loss.value)) {
      throw FitAborted("non-finite loss at iteration " + std::to_string(it) + " (view " +
                           std::to_string(view_index) + ", " + std::to_string(vol.active_count()) +
                           " active)",
                       it, view_index, std::make_shared<const GaussianVolume>(vol));
    }
    GradientBuffer grads = render_backward(state, vol, view.camera, loss.image_grad);
    for (std::size_t i = 0; i < vol.size(); ++i) {
      auto& g = grads.grads[i];
      for (int k = 0; k < 3; ++k) {
        if (cfg.optimize_offsets) {
          g[channel::kOffset + k] += loss.offset_grad[3 * i + k];
        } else {
          g[channel::kOffset + k] = 0.0;
        }
      }
    }
    for (std::size_t i = 0; i < vol.size(); ++i) {
      history.viewspace_grad_norm[i] += grads.viewspace_grad_norm[i];
      history.visible_count[i] += grads.visible_count[i];
    }

    stepping.lr = cfg.lr.scaled(std::pow(cfg.lr_final_scale, it / static_cast<double>(cfg.total_iters)));
    adam_step(vol, grads, adam, stepping, cfg.optimize_offsets);
    result.log.push_back({it, loss.value, psnr(state.image, view.image), vol.active_count()});
    if (observer) observer({FitEventKind::kIteration, it, vol, cp, grads, nullptr});

    const int done = it + 1;
    if (is_refinement(done, cfg.refine_start, refine_end, cfg.refine_interval)) {
      const std::vector<std::size_t> pruned = prune_select(vol, cfg.prune_opacity);
      std::vector<std::size_t> densified;
      {
        const std::vector<std::size_t> candidates = densify_select(vol, history, cfg.densify_grad);
        std::set_difference(candidates.begin(), candidates.end(), pruned.begin(), pruned.end(),
                            std::back_inserter(densified));
      }
      const ExchangeReport report =
          pool_exchange(vol, cp, pruned, densified, max_offset, eps_pool, rng);
      for (const auto& [src, added] : report.cloned) {
        adam.reset(added);
        (void)src;
      }
      history.clear();
      if (observer) observer({FitEventKind::kRefinement, it, vol, cp, grads, &report});
    }
    if (done == refine_end) {
      for (const std::size_t i : release_pool(vol, cp)) adam.reset(i);
      if (observer) observer({FitEventKind::kRelease, it, vol, cp, grads, nullptr});
    }
  }
  return result;
}

EvalResult evaluate(const GaussianVolume& volume, const PosedImageSet& dataset,
                    const RenderSettings& settings) {
  EvalResult out;
  if (dataset.views.empty()) return out;
  for (const PosedImage& view : dataset.views) {
    const ImageBuffer img = render(volume, view.camera, dataset.background, settings);
    out.per_view.push_back(image_terms(img, view.image));
    out.psnr += out.per_view.back().psnr;
    out.ssim += out.per_view.back().ssim;
  }
  out.psnr /= static_cast<double>(dataset.views.size());
  out.ssim /= static_cast<double>(dataset.views.size());
  return out;
}

}  // namespace gvfit
