#include "ctseg/imgvol.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctseg {

namespace {

void check_grid(const GridMeta& g) {
  for (int a = 0; a < 3; ++a) {
    if (g.dims[a] < 1) throw std::invalid_argument("grid: dims must be >= 1");
    if (!(g.spacing[a] > 0.0)) throw std::invalid_argument("grid: spacing must be > 0");
  }
}

size_t lerp_index(int x, int y, int z, const std::array<int, 3>& d) {
  return (static_cast<size_t>(z) * d[1] + y) * d[0] + x;
}

}  // namespace

void CtVolume::validate() const {
  check_grid(grid);
  if (data.size() != grid.voxel_count())
    throw std::invalid_argument("CtVolume: data length != nx*ny*nz");
  for (float v : data)
    if (!std::isfinite(v)) throw std::invalid_argument("CtVolume: non-finite value");
}

size_t BinaryMask::count() const {
  size_t n = 0;
  for (uint8_t v : data) n += v;
  return n;
}

void BinaryMask::validate() const {
  check_grid(grid);
  if (data.size() != grid.voxel_count())
    throw std::invalid_argument("BinaryMask: data length != nx*ny*nz");
  for (uint8_t v : data)
    if (v > 1) throw std::invalid_argument("BinaryMask: values must be 0 or 1");
}

void SliceImage::validate() const {
  if (height < 1 || width < 1) throw std::invalid_argument("SliceImage: empty");
  if (data.size() != static_cast<size_t>(height) * width)
    throw std::invalid_argument("SliceImage: data length != height*width");
  for (float v : data)
    if (!(v >= -1.0f && v <= 1.0f))
      throw std::invalid_argument("SliceImage: value outside [-1,1]");
}

std::string to_string(SliceLabel label) {
  switch (label) {
    case SliceLabel::healthy: return "healthy";
    case SliceLabel::infected: return "infected";
    default: return "unknown";
  }
}

SliceLabel slice_label_from_string(const std::string& s) {
  if (s == "healthy") return SliceLabel::healthy;
  if (s == "infected") return SliceLabel::infected;
  if (s == "unknown") return SliceLabel::unknown;
  throw std::invalid_argument("unknown slice label: " + s);
}

// Shared resampling geometry: output voxel j center maps to input coordinate
// u = ((j + 0.5) * target - 0.5 * spacing) / spacing, clamped to the border.
namespace {

struct AxisMap {
  int out_dim;
  double scale;   // target / spacing
  double offset;  // 0.5 * scale - 0.5
};

AxisMap make_axis(int in_dim, double spacing, double target) {
  AxisMap m;
  m.out_dim = std::max(1, static_cast<int>(std::llround(in_dim * spacing / target)));
  m.scale = target / spacing;
  m.offset = 0.5 * m.scale - 0.5;
  return m;
}

}  // namespace

CtVolume resample_isotropic(const CtVolume& vol, double target_mm) {
  if (!(target_mm > 0.0)) throw std::invalid_argument("resample: target must be > 0");
  vol.validate();
  const auto& g = vol.grid;

  if (g.spacing[0] == target_mm && g.spacing[1] == target_mm && g.spacing[2] == target_mm) {
    return vol;  // bit-identical copy
  }
  for (int a = 0; a < 3; ++a) {
    if (g.dims[a] < 2 && g.spacing[a] != target_mm)
      throw std::invalid_argument("resample: axis with dim < 2 needs interpolation");
  }

  AxisMap ax = make_axis(g.dims[0], g.spacing[0], target_mm);
  AxisMap ay = make_axis(g.dims[1], g.spacing[1], target_mm);
  AxisMap az = make_axis(g.dims[2], g.spacing[2], target_mm);

  CtVolume out;
  out.grid.dims = {ax.out_dim, ay.out_dim, az.out_dim};
  out.grid.spacing = {target_mm, target_mm, target_mm};
  out.grid.origin = g.origin;
  out.data.resize(out.grid.voxel_count());

  auto clamp_to = [](double u, int n, int& i0, double& t) {
    u = std::max(0.0, std::min(u, static_cast<double>(n - 1)));
    i0 = std::min(static_cast<int>(u), n - 2 >= 0 ? n - 2 : 0);
    t = u - i0;
  };

  for (int z = 0; z < az.out_dim; ++z) {
    int z0; double tz;
    clamp_to(z * az.scale + az.offset, g.dims[2], z0, tz);
    const int z1 = std::min(z0 + 1, g.dims[2] - 1);
    for (int y = 0; y < ay.out_dim; ++y) {
      int y0; double ty;
      clamp_to(y * ay.scale + ay.offset, g.dims[1], y0, ty);
      const int y1 = std::min(y0 + 1, g.dims[1] - 1);
      for (int x = 0; x < ax.out_dim; ++x) {
        int x0; double tx;
        clamp_to(x * ax.scale + ax.offset, g.dims[0], x0, tx);
        const int x1 = std::min(x0 + 1, g.dims[0] - 1);

        const double c000 = vol.data[lerp_index(x0, y0, z0, g.dims)];
        const double c100 = vol.data[lerp_index(x1, y0, z0, g.dims)];
        const double c010 = vol.data[lerp_index(x0, y1, z0, g.dims)];
        const double c110 = vol.data[lerp_index(x1, y1, z0, g.dims)];
        const double c001 = vol.data[lerp_index(x0, y0, z1, g.dims)];
        const double c101 = vol.data[lerp_index(x1, y0, z1, g.dims)];
        const double c011 = vol.data[lerp_index(x0, y1, z1, g.dims)];
        const double c111 = vol.data[lerp_index(x1, y1, z1, g.dims)];

        const double c00 = c000 + tx * (c100 - c000);
        const double c10 = c010 + tx * (c110 - c010);
        const double c01 = c001 + tx * (c101 - c001);
        const double c11 = c011 + tx * (c111 - c011);
        const double c0 = c00 + ty * (c10 - c00);
        const double c1 = c01 + ty * (c11 - c01);
        out.data[lerp_index(x, y, z, out.grid.dims)] =
            static_cast<float>(c0 + tz * (c1 - c0));
      }
    }
  }
  return out;
}

BinaryMask resample_mask_isotropic(const BinaryMask& mask, double target_mm) {
  if (!(target_mm > 0.0)) throw std::invalid_argument("resample: target must be > 0");
  mask.validate();
  const auto& g = mask.grid;
  if (g.spacing[0] == target_mm && g.spacing[1] == target_mm && g.spacing[2] == target_mm)
    return mask;

  AxisMap ax = make_axis(g.dims[0], g.spacing[0], target_mm);
  AxisMap ay = make_axis(g.dims[1], g.spacing[1], target_mm);
  AxisMap az = make_axis(g.dims[2], g.spacing[2], target_mm);

  BinaryMask out;
  out.grid.dims = {ax.out_dim, ay.out_dim, az.out_dim};
  out.grid.spacing = {target_mm, target_mm, target_mm};
  out.grid.origin = g.origin;
  out.data.resize(out.grid.voxel_count());

  auto nearest = [](double u, int n) {
    const long i = std::lround(u);
    return static_cast<int>(std::max(0l, std::min(i, static_cast<long>(n - 1))));
  };

  for (int z = 0; z < az.out_dim; ++z) {
    const int zi = nearest(z * az.scale + az.offset, g.dims[2]);
    for (int y = 0; y < ay.out_dim; ++y) {
      const int yi = nearest(y * ay.scale + ay.offset, g.dims[1]);
      for (int x = 0; x < ax.out_dim; ++x) {
        const int xi = nearest(x * ax.scale + ax.offset, g.dims[0]);
        out.data[lerp_index(x, y, z, out.grid.dims)] = mask.data[lerp_index(xi, yi, zi, g.dims)];
      }
    }
  }
  return out;
}

CtVolume window_normalize(const CtVolume& vol, double lo_hu, double hi_hu) {
  if (!(lo_hu < hi_hu)) throw std::invalid_argument("window_normalize: lo must be < hi");
  CtVolume out = vol;
  const double span = hi_hu - lo_hu;
  for (float& v : out.data) {
    const double t = 2.0 * ((static_cast<double>(v) - lo_hu) / span) - 1.0;
    v = static_cast<float>(std::clamp(t, -1.0, 1.0));
  }
  return out;
}

CtVolume apply_mask_zero_background(const CtVolume& norm, const BinaryMask& mask) {
  if (!norm.grid.same_grid(mask.grid))
    throw std::invalid_argument("apply_mask: volume and mask grids differ");
  CtVolume out = norm;
  for (size_t i = 0; i < out.data.size(); ++i)
    if (mask.data[i] == 0) out.data[i] = 0.0f;
  return out;
}

std::optional<BBox3> mask_bounding_box(const BinaryMask& mask) {
  const auto& d = mask.grid.dims;
  BBox3 box{{d[0], d[1], d[2]}, {-1, -1, -1}};
  size_t idx = 0;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x, ++idx) {
        if (!mask.data[idx]) continue;
        box.lo[0] = std::min(box.lo[0], x); box.hi[0] = std::max(box.hi[0], x);
        box.lo[1] = std::min(box.lo[1], y); box.hi[1] = std::max(box.hi[1], y);
        box.lo[2] = std::min(box.lo[2], z); box.hi[2] = std::max(box.hi[2], z);
      }
  if (box.hi[0] < 0) return std::nullopt;
  return box;
}

std::vector<SliceImage> extract_slices(const CtVolume& norm, const BinaryMask& mask,
                                       int side, const std::string& volume_id) {
  if (side < 1) throw std::invalid_argument("extract_slices: side must be >= 1");
  if (!norm.grid.same_grid(mask.grid))
    throw std::invalid_argument("extract_slices: volume and mask grids differ");

  const auto box = mask_bounding_box(mask);
  if (!box) return {};

  const int bw = box->hi[0] - box->lo[0] + 1;
  const int bh = box->hi[1] - box->lo[1] + 1;
  if (bw > side || bh > side)
    throw std::invalid_argument("extract_slices: lung bounding box exceeds crop side");

  const int x0 = box->lo[0] - (side - bw) / 2;
  const int y0 = box->lo[1] - (side - bh) / 2;
  const auto& dims = norm.grid.dims;

  std::vector<SliceImage> out;
  for (int z = box->lo[2]; z <= box->hi[2]; ++z) {
    // only slices that intersect the mask
    bool any = false;
    for (int y = 0; y < dims[1] && !any; ++y)
      for (int x = 0; x < dims[0]; ++x)
        if (mask.at(x, y, z)) { any = true; break; }
    if (!any) continue;

    SliceImage s;
    s.height = side;
    s.width = side;
    s.data.assign(static_cast<size_t>(side) * side, 0.0f);
    s.volume_id = volume_id;
    s.slice_index = z;
    s.crop_x0 = x0;
    s.crop_y0 = y0;
    for (int y = 0; y < side; ++y) {
      const int vy = y0 + y;
      if (vy < 0 || vy >= dims[1]) continue;
      for (int x = 0; x < side; ++x) {
        const int vx = x0 + x;
        if (vx < 0 || vx >= dims[0]) continue;
        if (mask.at(vx, vy, z)) s.at(x, y) = norm.at(vx, vy, z);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---- File I/O --------------------------------------------------------------

namespace {

void write_payload(const std::string& raw_path, const void* data, size_t bytes) {
  std::ofstream f(raw_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + raw_path);
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) throw std::runtime_error("write failed: " + raw_path);
}

std::vector<char> read_payload(const std::string& raw_path, size_t expected_bytes) {
  std::ifstream f(raw_path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open: " + raw_path);
  const auto size = static_cast<size_t>(f.tellg());
  if (size != expected_bytes)
    throw std::runtime_error("payload size mismatch for " + raw_path + ": header says " +
                             std::to_string(expected_bytes) + " bytes, file has " +
                             std::to_string(size));
  std::vector<char> buf(size);
  f.seekg(0);
  f.read(buf.data(), static_cast<std::streamsize>(size));
  if (!f) throw std::runtime_error("read failed: " + raw_path);
  return buf;
}

json grid_to_json(const GridMeta& g) {
  return json{{"dims", g.dims}, {"spacing", g.spacing}, {"origin", g.origin}};
}

GridMeta grid_from_json(const json& j) {
  GridMeta g;
  j.at("dims").get_to(g.dims);
  j.at("spacing").get_to(g.spacing);
  j.at("origin").get_to(g.origin);
  check_grid(g);
  return g;
}

json read_header(const std::string& path, const std::string& expect_type) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed header " + path + ": " + e.what());
  }
  if (j.value("type", "") != expect_type)
    throw std::runtime_error(path + ": expected type '" + expect_type + "'");
  if (j.value("byte_order", "little") != "little")
    throw std::runtime_error(path + ": unsupported byte order");
  return j;
}

std::string payload_path(const std::string& header_path, const json& j) {
  const std::string rel = j.at("data_file").get<std::string>();
  return (fs::path(header_path).parent_path() / rel).string();
}

void write_header(const std::string& path, json j) {
  j["byte_order"] = "little";
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << j.dump(2) << "\n";
}

static_assert(std::endian::native == std::endian::little,
              "file I/O assumes a little-endian host");

}  // namespace

void write_volume(const std::string& path, const CtVolume& vol) {
  vol.validate();
  json j = grid_to_json(vol.grid);
  j["type"] = "ct_volume";
  j["dtype"] = "float32";
  j["data_file"] = fs::path(path).filename().string() + ".raw";
  write_header(path, j);
  write_payload(path + ".raw", vol.data.data(), vol.data.size() * sizeof(float));
}

CtVolume read_volume(const std::string& path) {
  const json j = read_header(path, "ct_volume");
  if (j.value("dtype", "") != "float32")
    throw std::runtime_error(path + ": expected float32 payload");
  CtVolume vol;
  vol.grid = grid_from_json(j);
  const auto buf = read_payload(payload_path(path, j), vol.grid.voxel_count() * sizeof(float));
  vol.data.resize(vol.grid.voxel_count());
  std::memcpy(vol.data.data(), buf.data(), buf.size());
  return vol;
}

void write_mask(const std::string& path, const BinaryMask& mask) {
  mask.validate();
  json j = grid_to_json(mask.grid);
  j["type"] = "binary_mask";
  j["dtype"] = "uint8";
  j["data_file"] = fs::path(path).filename().string() + ".raw";
  write_header(path, j);
  write_payload(path + ".raw", mask.data.data(), mask.data.size());
}

BinaryMask read_mask(const std::string& path) {
  const json j = read_header(path, "binary_mask");
  if (j.value("dtype", "") != "uint8")
    throw std::runtime_error(path + ": expected uint8 payload");
  BinaryMask mask;
  mask.grid = grid_from_json(j);
  const auto buf = read_payload(payload_path(path, j), mask.grid.voxel_count());
  mask.data.assign(buf.begin(), buf.end());
  mask.validate();
  return mask;
}

void write_slice(const std::string& path, const SliceImage& slice) {
  slice.validate();
  json j{{"type", "slice"},
         {"height", slice.height},
         {"width", slice.width},
         {"dtype", "float32"},
         {"label", to_string(slice.label)},
         {"volume_id", slice.volume_id},
         {"slice_index", slice.slice_index},
         {"crop_x0", slice.crop_x0},
         {"crop_y0", slice.crop_y0},
         {"data_file", fs::path(path).filename().string() + ".raw"}};
  write_header(path, j);
  write_payload(path + ".raw", slice.data.data(), slice.data.size() * sizeof(float));
}

SliceImage read_slice(const std::string& path) {
  const json j = read_header(path, "slice");
  SliceImage s;
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.label = slice_label_from_string(j.at("label").get<std::string>());
  s.volume_id = j.value("volume_id", "");
  s.slice_index = j.value("slice_index", 0);
  s.crop_x0 = j.value("crop_x0", 0);
  s.crop_y0 = j.value("crop_y0", 0);
  if (s.height < 1 || s.width < 1) throw std::runtime_error(path + ": bad slice dims");
  const size_t n = static_cast<size_t>(s.height) * s.width;
  const auto buf = read_payload(payload_path(path, j), n * sizeof(float));
  s.data.resize(n);
  std::memcpy(s.data.data(), buf.data(), buf.size());
  return s;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  json j = json::array();
  for (const auto& e : entries)
    j.push_back({{"path", e.path}, {"slice_index", e.slice_index}, {"label", to_string(e.label)}});
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << j.dump(2) << "\n";
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed manifest " + path + ": " + e.what());
  }
  if (!j.is_array()) throw std::runtime_error(path + ": manifest must be a JSON array");
  std::vector<ManifestEntry> out;
  for (const auto& e : j) {
    ManifestEntry m;
    m.path = e.at("path").get<std::string>();
    m.slice_index = e.at("slice_index").get<int>();
    m.label = slice_label_from_string(e.at("label").get<std::string>());
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<SliceImage> load_manifest_slices(const std::string& manifest_path) {
  const auto entries = read_manifest(manifest_path);
  const fs::path dir = fs::path(manifest_path).parent_path();
  std::vector<SliceImage> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    SliceImage s = read_slice((dir / e.path).string());
    s.label = e.label;  // manifest label wins
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ctseg
