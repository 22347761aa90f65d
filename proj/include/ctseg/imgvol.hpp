#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ctseg {

// Row-major voxel index: data[(z * ny + y) * nx + x]. Axial slices (fixed z)
// are contiguous. Axes: x = left-right, y = anterior-posterior,
// z = superior-inferior. Voxel centers sit at origin + (i + 0.5) * spacing.
struct GridMeta {
  std::array<int, 3> dims{0, 0, 0};        // nx, ny, nz
  std::array<double, 3> spacing{1, 1, 1};  // mm per voxel
  std::array<double, 3> origin{0, 0, 0};   // mm

  bool same_grid(const GridMeta& o) const {
    return dims == o.dims && spacing == o.spacing && origin == o.origin;
  }
  size_t voxel_count() const {
    return static_cast<size_t>(dims[0]) * dims[1] * dims[2];
  }
};

// 3-D scalar field in Hounsfield units (or normalized intensity after
// window_normalize).
struct CtVolume {
  GridMeta grid;
  std::vector<float> data;

  size_t index(int x, int y, int z) const {
    return (static_cast<size_t>(z) * grid.dims[1] + y) * grid.dims[0] + x;
  }
  float at(int x, int y, int z) const { return data[index(x, y, z)]; }
  float& at(int x, int y, int z) { return data[index(x, y, z)]; }
  void validate() const;  // dims >= 1, spacing > 0, size match, finite values
};

// {0,1} field on the same grid as its paired volume.
struct BinaryMask {
  GridMeta grid;
  std::vector<uint8_t> data;

  size_t index(int x, int y, int z) const {
    return (static_cast<size_t>(z) * grid.dims[1] + y) * grid.dims[0] + x;
  }
  uint8_t at(int x, int y, int z) const { return data[index(x, y, z)]; }
  uint8_t& at(int x, int y, int z) { return data[index(x, y, z)]; }
  size_t count() const;
  void validate() const;  // values exactly 0/1
};

enum class SliceLabel { healthy, infected, unknown };

std::string to_string(SliceLabel label);
SliceLabel slice_label_from_string(const std::string& s);

// One axial slice, normalized to [-1,1], background (outside lung) exactly 0.
// crop_x0/crop_y0 locate the crop window in the source volume so predicted
// masks can be mapped back onto the volume grid.
struct SliceImage {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // row-major, data[y * width + x]
  SliceLabel label = SliceLabel::unknown;
  std::string volume_id;
  int slice_index = 0;
  int crop_x0 = 0;
  int crop_y0 = 0;

  float at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
  float& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  void validate() const;  // range and size checks
};

// Trilinear resampling to isotropic `target_mm` spacing.
// Output dims = round(dim * spacing / target), clamped-border sampling at
// voxel centers. Exact copy when the volume is already isotropic at target.
CtVolume resample_isotropic(const CtVolume& vol, double target_mm);

// Nearest-neighbor resampling for masks (preserves {0,1}).
BinaryMask resample_mask_isotropic(const BinaryMask& mask, double target_mm);

// v -> clamp(2*(v-lo)/(hi-lo) - 1, -1, 1).
CtVolume window_normalize(const CtVolume& vol, double lo_hu = -800.0,
                          double hi_hu = 100.0);

// Voxels with mask=0 forced to exactly 0; grids must match.
CtVolume apply_mask_zero_background(const CtVolume& norm, const BinaryMask& mask);

// One SliceImage per axial slice intersecting the mask, cropped/zero-padded to
// side x side, centered on the whole-volume lung bounding box. Values are
// taken only where mask=1 (background exactly 0). Empty mask -> empty list.
std::vector<SliceImage> extract_slices(const CtVolume& norm, const BinaryMask& mask,
                                       int side = 256,
                                       const std::string& volume_id = "");

// Bounding box helper: inclusive [lo, hi] per axis; nullopt for empty mask.
struct BBox3 {
  std::array<int, 3> lo;
  std::array<int, 3> hi;
};
std::optional<BBox3> mask_bounding_box(const BinaryMask& mask);

// ---- File I/O --------------------------------------------------------------
// Native format: JSON header at `path`, raw little-endian payload at
// `path + ".raw"` (float32 for volumes/slices, uint8 for masks). Round-trips
// are bit-exact.

void write_volume(const std::string& path, const CtVolume& vol);
CtVolume read_volume(const std::string& path);
void write_mask(const std::string& path, const BinaryMask& mask);
BinaryMask read_mask(const std::string& path);
void write_slice(const std::string& path, const SliceImage& slice);
SliceImage read_slice(const std::string& path);

// Slice manifest: JSON list of {path, slice_index, label}; paths relative to
// the manifest's directory.
struct ManifestEntry {
  std::string path;
  int slice_index = 0;
  SliceLabel label = SliceLabel::unknown;
};
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

// Loads every slice in a manifest, resolving relative paths.
std::vector<SliceImage> load_manifest_slices(const std::string& manifest_path);

}  // namespace ctseg
