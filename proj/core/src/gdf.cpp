#include "gvfit/gdf.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "gvfit/error.hpp"

namespace gvfit {
namespace {

std::vector<Vec3> qualifying_centers(const GaussianVolume& volume, double opacity_floor) {
  std::vector<Vec3> centers;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    if (!volume.active(i)) continue;
    if (sigmoid(volume.at(i).opacity_logit) < opacity_floor) continue;
    centers.push_back(gaussian_center(volume, i));
  }
  if (centers.empty()) {
    throw EmptyGeometryError("no active Gaussian reaches opacity floor " +
                             std::to_string(opacity_floor));
  }
  return centers;
}

// Uniform bins at lattice spacing over the box enclosing the bounds and all
// centers, stored as a compressed (offsets + indices) layout.
class CenterBins {
 public:
  CenterBins(const std::vector<Vec3>& centers, const GaussianVolume& volume)
      : centers_(centers), cell_(volume.spacing()) {
    // Coarsen the bins when centers are sparse so a bin holds about one.
    const double ratio = static_cast<double>(volume.size()) / static_cast<double>(centers.size());
    cell_ *= std::max(1.0, std::floor(std::cbrt(ratio)));
    Vec3 lo = volume.bounds().lo;
    Vec3 hi = volume.bounds().hi;
    for (const Vec3& c : centers) {
      lo = lo.cwiseMin(c);
      hi = hi.cwiseMax(c);
    }
    origin_ = lo;
    for (int k = 0; k < 3; ++k) {
      dims_[k] = static_cast<long>(std::floor((hi[k] - lo[k]) / cell_[k])) + 1;
    }
    std::vector<std::size_t> bin_of(centers.size());
    offsets_.assign(static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]) + 1, 0);
    for (std::size_t i = 0; i < centers.size(); ++i) {
      bin_of[i] = flat(cell_of(centers[i]));
      ++offsets_[bin_of[i] + 1];
    }
    for (std::size_t b = 1; b < offsets_.size(); ++b) offsets_[b] += offsets_[b - 1];
    members_.resize(centers.size());
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (std::size_t i = 0; i < centers.size(); ++i) members_[fill[bin_of[i]]++] = i;
  }

  double nearest_squared(const Vec3& p) const {
    const std::array<long, 3> home = cell_of(p);
    const long max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    double best = std::numeric_limits<double>::infinity();
    for (long r = 0; r <= max_ring; ++r) {
      visit_shell(home, r, p, best);
      // Every unvisited bin lies outside the box of shells 0..r.
      double gap = std::numeric_limits<double>::infinity();
      for (int k = 0; k < 3; ++k) {
        if (home[k] - r > 0) gap = std::min(gap, p[k] - (origin_[k] + (home[k] - r) * cell_[k]));
        if (home[k] + r + 1 < dims_[k]) {
          gap = std::min(gap, origin_[k] + (home[k] + r + 1) * cell_[k] - p[k]);
        }
      }
      if (std::isinf(gap)) break;  // the box already spans every bin
      gap = std::max(0.0, gap - 1e-9 * cell_.maxCoeff());
      if (best <= gap * gap) break;
    }
    return best;
  }

 private:
  std::array<long, 3> cell_of(const Vec3& p) const {
    std::array<long, 3> c{};
    for (int k = 0; k < 3; ++k) {
      c[k] = std::clamp(static_cast<long>(std::floor((p[k] - origin_[k]) / cell_[k])), 0L,
                        dims_[k] - 1);
    }
    return c;
  }

  std::size_t flat(const std::array<long, 3>& c) const {
    return static_cast<std::size_t>((c[0] * dims_[1] + c[1]) * dims_[2] + c[2]);
  }

  void visit_bin(const std::array<long, 3>& c, const Vec3& p, double& best) const {
    const std::size_t b = flat(c);
    for (std::size_t k = offsets_[b]; k < offsets_[b + 1]; ++k) {
      best = std::min(best, (p - centers_[members_[k]]).squaredNorm());
    }
  }

  void visit_shell(const std::array<long, 3>& home, long r, const Vec3& p, double& best) const {
    for (long dx = -r; dx <= r; ++dx) {
      const long x = home[0] + dx;
      if (x < 0 || x >= dims_[0]) continue;
      for (long dy = -r; dy <= r; ++dy) {
        const long y = home[1] + dy;
        if (y < 0 || y >= dims_[1]) continue;
        const bool edge = std::abs(dx) == r || std::abs(dy) == r;
        // Interior of the shell: only the two z faces.
        const long zstep = edge ? 1 : std::max(2 * r, 1L);
        for (long dz = -r; dz <= r; dz += zstep) {
          const long z = home[2] + dz;
          if (z < 0 || z >= dims_[2]) continue;
          visit_bin({x, y, z}, p, best);
        }
      }
    }
  }

  const std::vector<Vec3>& centers_;
  Vec3 cell_;
  Vec3 origin_;
  std::array<long, 3> dims_{};
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> members_;
};

}  // namespace

GDFVolume extract_gdf(const GaussianVolume& volume, double opacity_floor) {
  const std::vector<Vec3> centers = qualifying_centers(volume, opacity_floor);
  const CenterBins bins(centers, volume);
  GDFVolume out{volume.resolution(), volume.bounds(), std::vector<float>(volume.size())};
  const long count = static_cast<long>(volume.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < count; ++i) {
    const std::size_t j = static_cast<std::size_t>(i);
    out.values[j] = static_cast<float>(std::sqrt(bins.nearest_squared(grid_position(j, volume))));
  }
  return out;
}

GDFVolume gdf_oracle(const GaussianVolume& volume, double opacity_floor) {
  const std::vector<Vec3> centers = qualifying_centers(volume, opacity_floor);
  GDFVolume out{volume.resolution(), volume.bounds(), std::vector<float>(volume.size())};
  for (std::size_t i = 0; i < volume.size(); ++i) {
    const Vec3 p = grid_position(i, volume);
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& c : centers) best = std::min(best, (p - c).squaredNorm());
    out.values[i] = static_cast<float>(std::sqrt(best));
  }
  return out;
}

}  // namespace gvfit
