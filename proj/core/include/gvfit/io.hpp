#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gvfit/camera.hpp"
#include "gvfit/fit.hpp"
#include "gvfit/gdf.hpp"
#include "gvfit/scene.hpp"
#include "gvfit/volume.hpp"

namespace gvfit {

namespace fs = std::filesystem;

// ---- images -----------------------------------------------------------------

/// Decodes an 8-bit PNG to linear RGB. Alpha, if present, is composited
/// over `background` (linear). Throws IoError / ParseError.
ImageBuffer load_png(const fs::path& path, const Vec3& background = Vec3::Ones());

/// Writes linear RGB as 8-bit sRGB, clamping to [0, 1].
void save_png(const fs::path& path, const ImageBuffer& image);

double srgb_to_linear(double c);
double linear_to_srgb(double c);

// ---- datasets ---------------------------------------------------------------

/// Per-view record of a transforms.json manifest.
struct ManifestFrame {
  std::string file_path;  // as written in the manifest
  Mat4 transform;         // camera-to-world, NeRF convention (looks down -z, y up)
};

struct DatasetManifest {
  double camera_angle_x = 0.0;
  int width = 0;
  int height = 0;
  std::vector<ManifestFrame> frames;
  Vec3 background{1.0, 1.0, 1.0};
  Bounds bounds;
};

/// NeRF camera-to-world -> renderer camera (+z forward, y down), and back.
Mat4 nerf_to_renderer(const Mat4& c2w);
Mat4 renderer_to_nerf(const Mat4& c2w);

/// Parses transforms.json. `path` may be the file or its directory.
/// Throws ParseError naming the path and field, ConfigError for 0 frames.
DatasetManifest load_manifest(const fs::path& path);

/// Manifest plus decoded images. Image sizes must match the manifest's
/// declared w/h when present.
PosedImageSet load_dataset(const fs::path& path);

/// Writes `dir`/transforms.json and one PNG per view (r_<i>.png).
void save_dataset(const PosedImageSet& set, const fs::path& dir);

// ---- binary volumes ---------------------------------------------------------

inline constexpr std::uint32_t kVolumeFormatVersion = 1;
// magic(4) + version(4) + N(4) + bounds(6 x f32)
inline constexpr std::size_t kVolumeHeaderBytes = 36;

/// GVOL layout, little-endian:
///   "GVOL" u32 version u32 N f32[6] bounds (lo xyz, hi xyz)
///   N^3 records of 14 f32 in channel order, then N^3 active-flag bytes.
void save_volume(const GaussianVolume& volume, const fs::path& path);
GaussianVolume load_volume(const fs::path& path);

std::vector<std::uint8_t> encode_volume(const GaussianVolume& volume);
GaussianVolume decode_volume(const std::vector<std::uint8_t>& bytes);

/// GGDF layout: same header with magic "GGDF", then N^3 f32 distances.
void save_gdf(const GDFVolume& gdf, const fs::path& path);
GDFVolume load_gdf(const fs::path& path);

std::vector<std::uint8_t> encode_gdf(const GDFVolume& gdf);
GDFVolume decode_gdf(const std::vector<std::uint8_t>& bytes);

/// Binary little-endian PLY in the usual 3DGS vertex layout. Only active
/// points with activated opacity >= opacity_floor are written.
void export_ply(const GaussianVolume& volume, const fs::path& path, double opacity_floor = 0.0);

// Degree-0 spherical harmonic constant used to map color <-> f_dc.
inline constexpr double kShC0 = 0.28209479177387814;

// ---- configuration ----------------------------------------------------------

/// JSON text with every FitConfig / LossWeights / RenderSettings field.
/// `eps_offsets` lives at the top level (null = half a voxel) and is the
/// value the fit uses for the loss weights as well.
std::string fit_config_to_json(const FitConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a ParseError.
FitConfig fit_config_from_json(const std::string& text, const std::string& origin = "<config>");
FitConfig load_fit_config(const fs::path& path);
void save_fit_config(const FitConfig& cfg, const fs::path& path);

/// Scene plus train/test camera rigs for make-synthetic.
struct SyntheticSpec {
  SceneSpec scene;
  DatasetSpec train;
  DatasetSpec test{24, 1.6, 128, kDefaultFovX, Vec3(1.0, 1.0, 1.0), 0.5};
  bool write_test = true;
};

SyntheticSpec synthetic_spec_from_json(const std::string& text,
                                       const std::string& origin = "<spec>");
std::string synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec load_synthetic_spec(const fs::path& path);

// ---- metrics ----------------------------------------------------------------

/// Tab-separated: iteration, loss, psnr, active_count; one header line.
void write_metrics_log(const std::vector<MetricsRow>& rows, const fs::path& path);
std::string format_metrics_row(const MetricsRow& row);

std::vector<std::uint8_t> read_file(const fs::path& path);
void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace gvfit
