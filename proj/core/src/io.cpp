#include "gvfit/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "gvfit/error.hpp"

namespace gvfit {

using nlohmann::json;

namespace {

// ---- little-endian byte helpers ---------------------------------------------

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

void put_header(std::vector<std::uint8_t>& out, const char* magic, std::size_t n,
                const Bounds& b) {
  out.insert(out.end(), magic, magic + 4);
  put_u32(out, kVolumeFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(n));
  for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>(b.lo[k]));
  for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>(b.hi[k]));
}

struct Header {
  std::size_t n = 0;
  Bounds bounds;
};

// Validates magic, version and the exact payload length.
Header read_header(const std::vector<std::uint8_t>& bytes, const char* magic,
                   std::size_t bytes_per_point) {
  if (bytes.size() < 4) throw TruncatedError("file ends inside the magic number");
  if (std::memcmp(bytes.data(), magic, 4) != 0) {
    throw BadMagicError(std::string("expected magic '") + magic + "'");
  }
  if (bytes.size() < kVolumeHeaderBytes) throw TruncatedError("file ends inside the header");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kVolumeFormatVersion) {
    throw VersionMismatchError("format version " + std::to_string(version) + ", expected " +
                               std::to_string(kVolumeFormatVersion));
  }
  Header h;
  h.n = get_u32(bytes.data() + 8);
  if (h.n < 2 || h.n > 4096) throw FormatError("resolution " + std::to_string(h.n) + " out of range");
  for (int k = 0; k < 3; ++k) {
    h.bounds.lo[k] = get_f32(bytes.data() + 12 + 4 * k);
    h.bounds.hi[k] = get_f32(bytes.data() + 24 + 4 * k);
  }
  if (!h.bounds.lo.allFinite() || !h.bounds.hi.allFinite() ||
      (h.bounds.hi.array() <= h.bounds.lo.array()).any()) {
    throw FormatError("invalid bounds in header");
  }
  const std::size_t expected = kVolumeHeaderBytes + h.n * h.n * h.n * bytes_per_point;
  if (bytes.size() < expected) {
    throw TruncatedError("file has " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(expected));
  }
  if (bytes.size() > expected) throw FormatError("trailing bytes after payload");
  return h;
}

// ---- json helpers -----------------------------------------------------------

[[noreturn]] void parse_fail(const std::string& origin, const std::string& field,
                             const std::string& what) {
  throw ParseError(origin + ": field '" + field + "': " + what);
}

json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

// Reads fields out of one JSON object, remembering which keys were used.
class Reader {
 public:
  Reader(const json& obj, std::string origin, std::string prefix)
      : obj_(obj), origin_(std::move(origin)), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) parse_fail(origin_, prefix_.empty() ? "<root>" : prefix_, "expected an object");
  }

  std::string field(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
  const std::string& origin() const { return origin_; }

  const json* find(const std::string& key) {
    used_.push_back(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* j = find(key);
    if (!j) parse_fail(origin_, field(key), "missing");
    return *j;
  }

  void number(const std::string& key, double& out) {
    if (const json* j = find(key)) out = as_number(*j, key);
  }

  double as_number(const json& j, const std::string& key) const {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
      const std::string s = j.get<std::string>();
      if (s == "inf") return std::numeric_limits<double>::infinity();
    }
    parse_fail(origin_, field(key), "expected a number");
  }

  template <class Int>
  void integer(const std::string& key, Int& out) {
    if (const json* j = find(key)) {
      if (!j->is_number_integer()) parse_fail(origin_, field(key), "expected an integer");
      if constexpr (std::is_unsigned_v<Int>) {
        if (j->is_number_unsigned() || j->get<long long>() >= 0) {
          out = j->get<Int>();
          return;
        }
        parse_fail(origin_, field(key), "expected a non-negative integer");
      } else {
        out = j->get<Int>();
      }
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* j = find(key)) {
      if (!j->is_boolean()) parse_fail(origin_, field(key), "expected true or false");
      out = j->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const json* j = find(key)) {
      if (!j->is_string()) parse_fail(origin_, field(key), "expected a string");
      out = j->get<std::string>();
    }
  }

  void optional_number(const std::string& key, std::optional<double>& out) {
    if (const json* j = find(key)) {
      if (j->is_null()) out.reset();
      else out = as_number(*j, key);
    }
  }

  void optional_int(const std::string& key, std::optional<int>& out) {
    if (const json* j = find(key)) {
      if (j->is_null()) {
        out.reset();
      } else {
        if (!j->is_number_integer()) parse_fail(origin_, field(key), "expected an integer");
        out = j->get<int>();
      }
    }
  }

  void vec3(const std::string& key, Vec3& out) {
    if (const json* j = find(key)) out = to_vec3(*j, key);
  }

  Vec3 to_vec3(const json& j, const std::string& key) const {
    if (!j.is_array() || j.size() != 3) parse_fail(origin_, field(key), "expected 3 numbers");
    Vec3 v;
    for (int k = 0; k < 3; ++k) v[k] = as_number(j[k], key);
    return v;
  }

  void range(const std::string& key, std::pair<double, double>& out) {
    if (const json* j = find(key)) {
      if (!j->is_array() || j->size() != 2) parse_fail(origin_, field(key), "expected [lo, hi]");
      out = {as_number((*j)[0], key), as_number((*j)[1], key)};
    }
  }

  void bounds(const std::string& key, Bounds& out) {
    if (const json* j = find(key)) {
      if (!j->is_array() || j->size() != 2) parse_fail(origin_, field(key), "expected [[lo], [hi]]");
      out.lo = to_vec3((*j)[0], key);
      out.hi = to_vec3((*j)[1], key);
    }
  }

  Reader child(const std::string& key) {
    const json* j = find(key);
    static const json empty = json::object();
    return Reader(j ? *j : empty, origin_, field(key));
  }

  // Unknown keys are almost always typos; refuse them.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (std::find(used_.begin(), used_.end(), it.key()) == used_.end()) {
        parse_fail(origin_, field(it.key()), "unknown key");
      }
    }
  }

 private:
  const json& obj_;
  std::string origin_;
  std::string prefix_;
  std::vector<std::string> used_;
};

json number_or_inf(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  return v;
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
json bounds_json(const Bounds& b) { return json::array({vec3_json(b.lo), vec3_json(b.hi)}); }

std::string read_text(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace

// ---- files ------------------------------------------------------------------

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path.string() + ": read failed");
  return bytes;
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

// ---- images -----------------------------------------------------------------

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

ImageBuffer load_png(const fs::path& path, const Vec3& background) {
  if (!fs::exists(path)) throw IoError(path.string() + ": no such image");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw ParseError(path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ParseError(path.string() + ": " + msg);
  }
  ImageBuffer out(static_cast<int>(img.width), static_cast<int>(img.height));
  for (std::size_t i = 0; i < out.pixels(); ++i) {
    const double a = buf[4 * i + 3] / 255.0;
    for (int c = 0; c < 3; ++c) {
      const double lin = srgb_to_linear(buf[4 * i + c] / 255.0);
      out.rgb[3 * i + c] = a * lin + (1.0 - a) * background[c];
    }
  }
  return out;
}

void save_png(const fs::path& path, const ImageBuffer& image) {
  if (image.width <= 0 || image.height <= 0) throw ShapeError("cannot save an empty image");
  std::vector<std::uint8_t> buf(image.pixels() * 3);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double s = linear_to_srgb(std::clamp(image.rgb[i], 0.0, 1.0));
    buf[i] = static_cast<std::uint8_t>(std::lround(s * 255.0));
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + img.message);
  }
}

// ---- datasets ---------------------------------------------------------------

// NeRF cameras look down -z with y up; ours look down +z with y down, so the
// y and z basis columns flip sign. The map is its own inverse.
Mat4 nerf_to_renderer(const Mat4& c2w) {
  Mat4 m = c2w;
  m.col(1).head<3>() *= -1.0;
  m.col(2).head<3>() *= -1.0;
  return m;
}

Mat4 renderer_to_nerf(const Mat4& c2w) { return nerf_to_renderer(c2w); }

namespace {

fs::path manifest_file(const fs::path& path) {
  if (fs::is_directory(path)) return path / "transforms.json";
  return path;
}

fs::path frame_image_path(const fs::path& dir, const std::string& file_path) {
  fs::path p = dir / fs::path(file_path).lexically_normal();
  if (!p.has_extension()) p += ".png";
  return p;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  const fs::path file = manifest_file(path);
  if (!fs::exists(file)) throw ParseError(file.string() + ": manifest not found");
  const std::string origin = file.string();
  const json root = parse_json(read_text(file), origin);
  if (!root.is_object()) parse_fail(origin, "<root>", "expected an object");

  DatasetManifest m;
  auto it = root.find("camera_angle_x");
  if (it == root.end()) parse_fail(origin, "camera_angle_x", "missing");
  if (!it->is_number()) parse_fail(origin, "camera_angle_x", "expected a number");
  m.camera_angle_x = it->get<double>();
  if (!(m.camera_angle_x > 0.0 && m.camera_angle_x < 3.14159265358979)) {
    parse_fail(origin, "camera_angle_x", "must lie in (0, pi)");
  }
  if (auto w = root.find("w"); w != root.end()) {
    if (!w->is_number_integer() || w->get<int>() <= 0) parse_fail(origin, "w", "expected a positive integer");
    m.width = w->get<int>();
  }
  if (auto h = root.find("h"); h != root.end()) {
    if (!h->is_number_integer() || h->get<int>() <= 0) parse_fail(origin, "h", "expected a positive integer");
    m.height = h->get<int>();
  }
  if (auto bg = root.find("background"); bg != root.end()) {
    if (!bg->is_array() || bg->size() != 3) parse_fail(origin, "background", "expected 3 numbers");
    for (int k = 0; k < 3; ++k) {
      if (!(*bg)[k].is_number()) parse_fail(origin, "background", "expected 3 numbers");
      m.background[k] = (*bg)[k].get<double>();
    }
  }
  if (auto b = root.find("bounds"); b != root.end()) {
    Reader r(root, origin, "");
    r.bounds("bounds", m.bounds);
  }

  auto frames = root.find("frames");
  if (frames == root.end()) parse_fail(origin, "frames", "missing");
  if (!frames->is_array()) parse_fail(origin, "frames", "expected an array");
  if (frames->empty()) throw ConfigError(origin + ": dataset has no frames");

  for (std::size_t i = 0; i < frames->size(); ++i) {
    const json& f = (*frames)[i];
    const std::string where = "frames[" + std::to_string(i) + "]";
    if (!f.is_object()) parse_fail(origin, where, "expected an object");
    ManifestFrame frame;
    auto fp = f.find("file_path");
    if (fp == f.end() || !fp->is_string()) parse_fail(origin, where + ".file_path", "missing or not a string");
    frame.file_path = fp->get<std::string>();

    auto tm = f.find("transform_matrix");
    const std::string tf = where + ".transform_matrix";
    if (tm == f.end()) parse_fail(origin, tf, "missing");
    if (!tm->is_array() || tm->size() != 4) parse_fail(origin, tf, "expected a 4x4 array");
    for (int r = 0; r < 4; ++r) {
      const json& row = (*tm)[r];
      if (!row.is_array() || row.size() != 4) parse_fail(origin, tf, "expected a 4x4 array");
      for (int c = 0; c < 4; ++c) {
        if (!row[c].is_number()) parse_fail(origin, tf, "non-numeric entry");
        frame.transform(r, c) = row[c].get<double>();
      }
    }
    if (!frame.transform.allFinite()) parse_fail(origin, tf, "non-finite entry");
    const Mat3 rot = frame.transform.topLeftCorner<3, 3>();
    if ((rot.transpose() * rot - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-4) {
      parse_fail(origin, tf, "rotation block is not orthonormal");
    }
    m.frames.push_back(std::move(frame));
  }
  return m;
}

PosedImageSet load_dataset(const fs::path& path) {
  const fs::path file = manifest_file(path);
  const DatasetManifest m = load_manifest(file);
  const fs::path dir = file.parent_path();

  PosedImageSet set;
  set.background = m.background;
  set.bounds = m.bounds;
  set.views.resize(m.frames.size());
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    const fs::path img_path = frame_image_path(dir, m.frames[i].file_path);
    const std::string where = "frames[" + std::to_string(i) + "].file_path";
    if (!fs::exists(img_path)) {
      parse_fail(file.string(), where, "image '" + img_path.string() + "' not found");
    }
    ImageBuffer img = load_png(img_path, m.background);
    if ((m.width > 0 && img.width != m.width) || (m.height > 0 && img.height != m.height)) {
      parse_fail(file.string(), where,
                 "image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                     ", manifest declares " + std::to_string(m.width) + "x" +
                     std::to_string(m.height));
    }
    const double f = focal_from_fov(m.camera_angle_x, img.width);
    set.views[i].camera = Camera::from_camera_to_world(nerf_to_renderer(m.frames[i].transform),
                                                       img.width, img.height, f, f,
                                                       0.5 * img.width, 0.5 * img.height);
    set.views[i].image = std::move(img);
  }
  return set;
}

void save_dataset(const PosedImageSet& set, const fs::path& dir) {
  if (set.views.empty()) throw ConfigError("cannot save a dataset without views");
  fs::create_directories(dir);
  const Camera& first = set.views.front().camera;
  json root;
  root["camera_angle_x"] = 2.0 * std::atan(0.5 * first.width / first.fx);
  root["w"] = first.width;
  root["h"] = first.height;
  root["background"] = vec3_json(set.background);
  root["bounds"] = bounds_json(set.bounds);
  json frames = json::array();
  for (std::size_t i = 0; i < set.views.size(); ++i) {
    const PosedImage& v = set.views[i];
    if (v.camera.width != first.width || v.camera.height != first.height ||
        v.camera.fx != first.fx || v.camera.fy != first.fx) {
      throw ConfigError("transforms.json needs one shared square-pixel intrinsic");
    }
    char name[32];
    std::snprintf(name, sizeof name, "r_%03zu", i);
    const Mat4 c2w = renderer_to_nerf(v.camera.camera_to_world());
    json rows = json::array();
    for (int r = 0; r < 4; ++r) {
      rows.push_back(json::array({c2w(r, 0), c2w(r, 1), c2w(r, 2), c2w(r, 3)}));
    }
    frames.push_back({{"file_path", std::string("./") + name}, {"transform_matrix", rows}});
    save_png(dir / (std::string(name) + ".png"), v.image);
  }
  root["frames"] = frames;
  write_text(dir / "transforms.json", root.dump(2) + "\n");
}

// ---- binary volumes ---------------------------------------------------------

std::vector<std::uint8_t> encode_volume(const GaussianVolume& volume) {
  const std::size_t n = volume.size();
  std::vector<std::uint8_t> out;
  out.reserve(kVolumeHeaderBytes + n * (kChannels * 4 + 1));
  put_header(out, "GVOL", volume.resolution(), volume.bounds());
  for (const GaussianAttributes& a : volume.attributes()) {
    for (float f : a.to_channels()) put_f32(out, f);
  }
  const auto mask = volume.active_mask();
  out.insert(out.end(), mask.begin(), mask.end());
  return out;
}

GaussianVolume decode_volume(const std::vector<std::uint8_t>& bytes) {
  const Header h = read_header(bytes, "GVOL", kChannels * 4 + 1);
  GaussianVolume vol(h.n, h.bounds);
  const std::uint8_t* p = bytes.data() + kVolumeHeaderBytes;
  for (std::size_t i = 0; i < vol.size(); ++i) {
    Channels c;
    for (std::size_t k = 0; k < kChannels; ++k, p += 4) c[k] = get_f32(p);
    vol.at(i) = GaussianAttributes::from_channels(c);
  }
  for (std::size_t i = 0; i < vol.size(); ++i, ++p) {
    if (*p > 1) throw FormatError("active flag " + std::to_string(i) + " is not 0 or 1");
    vol.set_active(i, *p != 0);
  }
  return vol;
}

void save_volume(const GaussianVolume& volume, const fs::path& path) {
  write_file(path, encode_volume(volume));
}

GaussianVolume load_volume(const fs::path& path) {
  return decode_volume(read_file(path));
}

std::vector<std::uint8_t> encode_gdf(const GDFVolume& gdf) {
  const std::size_t n3 = gdf.resolution * gdf.resolution * gdf.resolution;
  if (gdf.values.size() != n3) throw ShapeError("GDF value count does not match its resolution");
  std::vector<std::uint8_t> out;
  out.reserve(kVolumeHeaderBytes + n3 * 4);
  put_header(out, "GGDF", gdf.resolution, gdf.bounds);
  for (float v : gdf.values) put_f32(out, v);
  return out;
}

GDFVolume decode_gdf(const std::vector<std::uint8_t>& bytes) {
  const Header h = read_header(bytes, "GGDF", 4);
  GDFVolume gdf{h.n, h.bounds, std::vector<float>(h.n * h.n * h.n)};
  const std::uint8_t* p = bytes.data() + kVolumeHeaderBytes;
  for (float& v : gdf.values) {
    v = get_f32(p);
    p += 4;
  }
  return gdf;
}

void save_gdf(const GDFVolume& gdf, const fs::path& path) { write_file(path, encode_gdf(gdf)); }

GDFVolume load_gdf(const fs::path& path) { return decode_gdf(read_file(path)); }

void export_ply(const GaussianVolume& volume, const fs::path& path, double opacity_floor) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    if (volume.active(i) && sigmoid(volume.at(i).opacity_logit) >= opacity_floor) keep.push_back(i);
  }
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\n"
         << "element vertex " << keep.size() << "\n";
  for (const char* name : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
                           "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
                           "rot_3"}) {
    header << "property float " << name << "\n";
  }
  header << "end_header\n";
  const std::string h = header.str();

  std::vector<std::uint8_t> out(h.begin(), h.end());
  out.reserve(out.size() + keep.size() * 17 * 4);
  for (std::size_t i : keep) {
    const GaussianAttributes& a = volume.at(i);
    const Vec3 mu = gaussian_center(volume, i);
    for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>(mu[k]));
    for (int k = 0; k < 3; ++k) put_f32(out, 0.0f);
    for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>((a.color[k] - 0.5) / kShC0));
    put_f32(out, a.opacity_logit);
    for (int k = 0; k < 3; ++k) put_f32(out, a.log_scale[k]);
    for (int k = 0; k < 4; ++k) put_f32(out, a.rotation[k]);
  }
  write_file(path, out);
}

// ---- configuration ----------------------------------------------------------

std::string fit_config_to_json(const FitConfig& cfg) {
  json j;
  j["resolution"] = cfg.resolution;
  j["bounds"] = bounds_json(cfg.bounds);
  j["total_iters"] = cfg.total_iters;
  j["refine_interval"] = cfg.refine_interval;
  j["refine_start"] = cfg.refine_start;
  j["refine_end"] = cfg.refine_end ? json(*cfg.refine_end) : json(nullptr);
  j["prune_opacity"] = cfg.prune_opacity;
  j["densify_grad"] = number_or_inf(cfg.densify_grad);
  j["lr"] = {{"offset", cfg.lr.offset},
             {"log_scale", cfg.lr.log_scale},
             {"rotation", cfg.lr.rotation},
             {"opacity", cfg.lr.opacity},
             {"color", cfg.lr.color}};
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["lr_final_scale"] = cfg.lr_final_scale;
  j["eps_offsets"] = cfg.eps_offsets ? json(*cfg.eps_offsets) : json(nullptr);
  j["eps_pool"] = cfg.eps_pool ? json(*cfg.eps_pool) : json(nullptr);
  j["optimize_offsets"] = cfg.optimize_offsets;
  j["loss"] = {{"lambda_l1", cfg.loss.lambda_l1},       {"lambda_ssim", cfg.loss.lambda_ssim},
               {"lambda_offsets", cfg.loss.lambda_offsets}, {"lambda_image", cfg.loss.lambda_image},
               {"lambda_3d", cfg.loss.lambda_3d},       {"lambda_2d", cfg.loss.lambda_2d}};
  j["render"] = {{"low_pass", cfg.render.low_pass},
                 {"near_plane", cfg.render.near_plane},
                 {"alpha_max", cfg.render.alpha_max},
                 {"min_alpha", cfg.render.min_alpha},
                 {"transmittance_floor", cfg.render.transmittance_floor},
                 {"tile_size", cfg.render.tile_size},
                 {"threads", cfg.render.threads}};
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

FitConfig fit_config_from_json(const std::string& text, const std::string& origin) {
  const json root = parse_json(text, origin);
  FitConfig cfg;
  Reader r(root, origin, "");
  r.integer("resolution", cfg.resolution);
  r.bounds("bounds", cfg.bounds);
  r.integer("total_iters", cfg.total_iters);
  r.integer("refine_interval", cfg.refine_interval);
  r.integer("refine_start", cfg.refine_start);
  r.optional_int("refine_end", cfg.refine_end);
  r.number("prune_opacity", cfg.prune_opacity);
  r.number("densify_grad", cfg.densify_grad);
  {
    Reader lr = r.child("lr");
    lr.number("offset", cfg.lr.offset);
    lr.number("log_scale", cfg.lr.log_scale);
    lr.number("rotation", cfg.lr.rotation);
    lr.number("opacity", cfg.lr.opacity);
    lr.number("color", cfg.lr.color);
    lr.finish();
  }
  r.number("beta1", cfg.beta1);
  r.number("beta2", cfg.beta2);
  r.number("adam_eps", cfg.adam_eps);
  r.number("lr_final_scale", cfg.lr_final_scale);
  r.optional_number("eps_offsets", cfg.eps_offsets);
  r.optional_number("eps_pool", cfg.eps_pool);
  r.boolean("optimize_offsets", cfg.optimize_offsets);
  {
    Reader l = r.child("loss");
    l.number("lambda_l1", cfg.loss.lambda_l1);
    l.number("lambda_ssim", cfg.loss.lambda_ssim);
    l.number("lambda_offsets", cfg.loss.lambda_offsets);
    l.number("lambda_image", cfg.loss.lambda_image);
    l.number("lambda_3d", cfg.loss.lambda_3d);
    l.number("lambda_2d", cfg.loss.lambda_2d);
    // Accepted here too; the top-level key wins.
    std::optional<double> eps;
    l.optional_number("eps_offsets", eps);
    if (eps && !cfg.eps_offsets) cfg.eps_offsets = eps;
    l.finish();
  }
  {
    Reader s = r.child("render");
    s.number("low_pass", cfg.render.low_pass);
    s.number("near_plane", cfg.render.near_plane);
    s.number("alpha_max", cfg.render.alpha_max);
    s.number("min_alpha", cfg.render.min_alpha);
    s.number("transmittance_floor", cfg.render.transmittance_floor);
    s.integer("tile_size", cfg.render.tile_size);
    s.integer("threads", cfg.render.threads);
    s.finish();
  }
  r.integer("seed", cfg.seed);
  r.finish();
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

FitConfig load_fit_config(const fs::path& path) {
  return fit_config_from_json(read_text(path), path.string());
}

void save_fit_config(const FitConfig& cfg, const fs::path& path) {
  write_text(path, fit_config_to_json(cfg));
}

namespace {

void read_dataset_spec(Reader r, DatasetSpec& d) {
  r.integer("view_count", d.view_count);
  r.number("radius", d.radius);
  r.integer("image_size", d.image_size);
  r.number("fov_x", d.fov_x);
  r.vec3("background", d.background);
  r.number("azimuth_shift", d.azimuth_shift);
  r.finish();
}

json dataset_spec_json(const DatasetSpec& d) {
  return {{"view_count", d.view_count}, {"radius", d.radius},
          {"image_size", d.image_size}, {"fov_x", d.fov_x},
          {"background", vec3_json(d.background)}, {"azimuth_shift", d.azimuth_shift}};
}

}  // namespace

SyntheticSpec synthetic_spec_from_json(const std::string& text, const std::string& origin) {
  const json root = parse_json(text, origin);
  SyntheticSpec spec;
  Reader r(root, origin, "");
  {
    Reader s = r.child("scene");
    SceneSpec& sc = spec.scene;
    s.integer("seed", sc.seed);
    s.integer("gaussian_count", sc.gaussian_count);
    std::string name = to_string(sc.placement);
    s.string("placement", name);
    try {
      sc.placement = parse_placement(name);
    } catch (const ConfigError& e) {
      parse_fail(origin, s.field("placement"), e.what());
    }
    name = to_string(sc.colors);
    s.string("colors", name);
    try {
      sc.colors = parse_color_scheme(name);
    } catch (const ConfigError& e) {
      parse_fail(origin, s.field("colors"), e.what());
    }
    s.range("opacity_range", sc.opacity_range);
    s.range("scale_range", sc.scale_range);
    s.vec3("constant_color", sc.constant_color);
    s.integer("resolution", sc.resolution);
    s.bounds("bounds", sc.bounds);
    s.number("sphere_radius", sc.sphere_radius);
    s.number("shell_inner", sc.shell_inner);
    s.number("shell_outer", sc.shell_outer);
    s.finish();
  }
  read_dataset_spec(r.child("train"), spec.train);
  read_dataset_spec(r.child("test"), spec.test);
  r.boolean("write_test", spec.write_test);
  r.finish();
  try {
    spec.scene.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return spec;
}

std::string synthetic_spec_to_json(const SyntheticSpec& spec) {
  const SceneSpec& sc = spec.scene;
  json j;
  j["scene"] = {{"seed", sc.seed},
                {"gaussian_count", sc.gaussian_count},
                {"placement", to_string(sc.placement)},
                {"colors", to_string(sc.colors)},
                {"opacity_range", json::array({sc.opacity_range.first, sc.opacity_range.second})},
                {"scale_range", json::array({sc.scale_range.first, sc.scale_range.second})},
                {"constant_color", vec3_json(sc.constant_color)},
                {"resolution", sc.resolution},
                {"bounds", bounds_json(sc.bounds)},
                {"sphere_radius", sc.sphere_radius},
                {"shell_inner", sc.shell_inner},
                {"shell_outer", sc.shell_outer}};
  j["train"] = dataset_spec_json(spec.train);
  j["test"] = dataset_spec_json(spec.test);
  j["write_test"] = spec.write_test;
  return j.dump(2) + "\n";
}

SyntheticSpec load_synthetic_spec(const fs::path& path) {
  return synthetic_spec_from_json(read_text(path), path.string());
}

// ---- metrics ----------------------------------------------------------------

std::string format_metrics_row(const MetricsRow& row) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d\t%.8g\t%.6f\t%zu", row.iteration, row.loss, row.psnr,
                row.active_count);
  return buf;
}

void write_metrics_log(const std::vector<MetricsRow>& rows, const fs::path& path) {
  std::string text = "iteration\tloss\tpsnr\tactive_count\n";
  for (const MetricsRow& r : rows) text += format_metrics_row(r) + "\n";
  write_text(path, text);
}

}  // namespace gvfit
