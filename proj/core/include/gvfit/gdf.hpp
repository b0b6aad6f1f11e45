#pragma once

#include <cstddef>
#include <vector>

#include "gvfit/volume.hpp"

namespace gvfit {

/// Per-lattice-point distance to the nearest qualifying Gaussian center,
/// stored in the same order as GaussianVolume.
struct GDFVolume {
  std::size_t resolution = 0;
  Bounds bounds;
  std::vector<float> values;

  friend bool operator==(const GDFVolume&, const GDFVolume&) = default;
};

inline constexpr double kDefaultOpacityFloor = 0.05;

/// Binned nearest-center search. Throws EmptyGeometryError when no active
/// Gaussian has activated opacity >= opacity_floor.
GDFVolume extract_gdf(const GaussianVolume& volume, double opacity_floor = kDefaultOpacityFloor);

/// Exhaustive O(N^6) reference for extract_gdf.
GDFVolume gdf_oracle(const GaussianVolume& volume, double opacity_floor = kDefaultOpacityFloor);

}  // namespace gvfit
