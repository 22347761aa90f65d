#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ctseg/imgvol.hpp"
#include "ctseg/png_io.hpp"
#include "ctseg/rng.hpp"

using namespace ctseg;
namespace fs = std::filesystem;

namespace {

CtVolume make_volume(std::array<int, 3> dims, std::array<double, 3> spacing,
                     float fill = 0.0f) {
  CtVolume v;
  v.grid.dims = dims;
  v.grid.spacing = spacing;
  v.data.assign(v.grid.voxel_count(), fill);
  return v;
}

BinaryMask make_mask(const GridMeta& grid, uint8_t fill = 1) {
  BinaryMask m;
  m.grid = grid;
  m.data.assign(grid.voxel_count(), fill);
  return m;
}

CtVolume random_volume(std::array<int, 3> dims, std::array<double, 3> spacing, Rng& rng) {
  CtVolume v = make_volume(dims, spacing);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform(-1000.0, 400.0));
  return v;
}

fs::path temp_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / "ctseg_tests" / name;
  fs::create_directories(dir);
  return dir;
}

// independent 1-D linear interpolation at output voxel centers, clamped ends
double lerp_axis_oracle(const std::vector<double>& values, double spacing, double target,
                        int j) {
  const double u = ((j + 0.5) * target - 0.5 * spacing) / spacing;
  if (u <= 0) return values.front();
  if (u >= static_cast<double>(values.size() - 1)) return values.back();
  const int i0 = static_cast<int>(u);
  const double t = u - i0;
  return values[i0] * (1 - t) + values[i0 + 1] * t;
}

}  // namespace

TEST_CASE("resample identity spacing returns bit-identical copy") {
  Rng rng(7);
  CtVolume v = random_volume({5, 4, 3}, {1, 1, 1}, rng);
  const CtVolume out = resample_isotropic(v, 1.0);
  CHECK(out.grid.dims == v.grid.dims);
  CHECK(out.data == v.data);
}

TEST_CASE("resample 2x1x1 against linear interpolation oracle") {
  CtVolume v = make_volume({2, 1, 1}, {2, 1, 1});
  v.data = {0.0f, 100.0f};
  const CtVolume out = resample_isotropic(v, 1.0);
  REQUIRE(out.grid.dims == std::array<int, 3>{4, 1, 1});
  const std::vector<double> axis{0.0, 100.0};
  for (int j = 0; j < 4; ++j)
    CHECK(out.data[j] == doctest::Approx(lerp_axis_oracle(axis, 2.0, 1.0, j)).epsilon(1e-6));
}

TEST_CASE("resample constant volume stays constant") {
  CtVolume v = make_volume({4, 5, 6}, {2, 1.5, 1}, -123.25f);
  const CtVolume out = resample_isotropic(v, 1.0);
  for (float x : out.data) CHECK(x == -123.25f);
}

TEST_CASE("resample preserves global min/max envelope") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    CtVolume v = random_volume({6, 5, 4}, {1.7, 0.9, 2.3}, rng);
    const auto [mn, mx] = std::minmax_element(v.data.begin(), v.data.end());
    const CtVolume out = resample_isotropic(v, 1.0);
    for (float x : out.data) {
      CHECK(x >= *mn);
      CHECK(x <= *mx);
    }
  }
}

TEST_CASE("resample rejects degenerate axes that need interpolation") {
  CtVolume v = make_volume({1, 4, 4}, {2, 1, 1});
  CHECK_THROWS_AS(resample_isotropic(v, 1.0), std::invalid_argument);
  // a dim-1 axis already at the target spacing needs no work
  CtVolume ok = make_volume({1, 4, 4}, {2, 1, 1});
  CHECK_NOTHROW(resample_isotropic(ok, 2.0));
}

TEST_CASE("window_normalize endpoints and midpoint") {
  CtVolume v = make_volume({3, 1, 1}, {1, 1, 1});
  v.data = {-800.0f, -350.0f, 500.0f};
  const CtVolume out = window_normalize(v);
  CHECK(out.data[0] == -1.0f);
  CHECK(out.data[1] == 0.0f);
  CHECK(out.data[2] == 1.0f);
}

TEST_CASE("window_normalize is monotone and idempotent through HU re-expression") {
  Rng rng(5);
  const double lo = -800, hi = 100;
  std::vector<float> hus;
  for (int i = 0; i < 200; ++i) hus.push_back(static_cast<float>(rng.uniform(-1200, 600)));
  std::sort(hus.begin(), hus.end());
  CtVolume v = make_volume({static_cast<int>(hus.size()), 1, 1}, {1, 1, 1});
  v.data = hus;
  const CtVolume out = window_normalize(v, lo, hi);
  for (size_t i = 1; i < out.data.size(); ++i) CHECK(out.data[i] >= out.data[i - 1]);

  // map normalized values back to HU and window again
  CtVolume back = out;
  for (auto& x : back.data)
    x = static_cast<float>(lo + (static_cast<double>(x) + 1.0) * 0.5 * (hi - lo));
  const CtVolume again = window_normalize(back, lo, hi);
  for (size_t i = 0; i < out.data.size(); ++i)
    CHECK(again.data[i] == doctest::Approx(out.data[i]).epsilon(1e-6));
}

TEST_CASE("apply_mask_zero_background") {
  Rng rng(11);
  CtVolume v = random_volume({4, 4, 2}, {1, 1, 1}, rng);

  SUBCASE("all ones keeps input") {
    const BinaryMask m = make_mask(v.grid, 1);
    CHECK(apply_mask_zero_background(v, m).data == v.data);
  }
  SUBCASE("all zeros clears everything") {
    const BinaryMask m = make_mask(v.grid, 0);
    for (float x : apply_mask_zero_background(v, m).data) CHECK(x == 0.0f);
  }
  SUBCASE("checkerboard verified voxelwise") {
    BinaryMask m = make_mask(v.grid, 0);
    for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = i % 2;
    const CtVolume out = apply_mask_zero_background(v, m);
    for (size_t i = 0; i < out.data.size(); ++i)
      CHECK(out.data[i] == (m.data[i] ? v.data[i] : 0.0f));
  }
  SUBCASE("grid mismatch errors") {
    BinaryMask m = make_mask(v.grid, 1);
    m.grid.dims[0] += 1;
    m.data.resize(m.grid.voxel_count(), 1);
    CHECK_THROWS_AS(apply_mask_zero_background(v, m), std::invalid_argument);
  }
}

TEST_CASE("extract_slices: count forced by mask extent") {
  CtVolume v = make_volume({32, 32, 32}, {1, 1, 1}, 0.25f);
  BinaryMask m = make_mask(v.grid, 0);
  for (int z = 10; z <= 20; ++z)
    for (int y = 8; y < 24; ++y)
      for (int x = 8; x < 24; ++x) m.at(x, y, z) = 1;
  const auto slices = extract_slices(v, m, 32, "vol");
  CHECK(slices.size() == 11);
  for (const auto& s : slices) {
    CHECK(s.height == 32);
    CHECK(s.width == 32);
    s.validate();
    CHECK(s.volume_id == "vol");
  }
  CHECK(slices.front().slice_index == 10);
  CHECK(slices.back().slice_index == 20);
}

TEST_CASE("extract_slices: crop window centered on bbox center") {
  CtVolume v = make_volume({128, 128, 8}, {1, 1, 1}, 0.5f);
  BinaryMask m = make_mask(v.grid, 0);
  // bbox 100 wide x 120 tall centered at volume center
  const int x_lo = 14, x_hi = 113, y_lo = 4, y_hi = 123;
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x) m.at(x, y, 3) = 1;
  const int side = 128;
  const auto slices = extract_slices(v, m, side, "c");
  REQUIRE(slices.size() == 1);
  // coordinate oracle: start = lo - (side - extent)/2
  CHECK(slices[0].crop_x0 == x_lo - (side - 100) / 2);
  CHECK(slices[0].crop_y0 == y_lo - (side - 120) / 2);
  // mask voxel maps to its value, outside-lung pixel to 0
  const auto& s = slices[0];
  CHECK(s.at(x_lo - s.crop_x0, y_lo - s.crop_y0) == 0.5f);
  CHECK(s.at(0, 0) == 0.0f);
}

TEST_CASE("extract_slices: empty mask and oversized bbox") {
  CtVolume v = make_volume({16, 16, 4}, {1, 1, 1});
  BinaryMask empty = make_mask(v.grid, 0);
  CHECK(extract_slices(v, empty, 16).empty());

  BinaryMask full = make_mask(v.grid, 1);
  CHECK_THROWS_AS(extract_slices(v, full, 8), std::invalid_argument);
}

TEST_CASE("extract_slices output satisfies SliceImage invariants") {
  Rng rng(3);
  CtVolume v = make_volume({24, 24, 8}, {1, 1, 1});
  for (auto& x : v.data) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  BinaryMask m = make_mask(v.grid, 0);
  for (int z = 2; z < 6; ++z)
    for (int y = 6; y < 18; ++y)
      for (int x = 4; x < 20; ++x) m.at(x, y, z) = rng.uniform() < 0.7 ? 1 : 0;
  const CtVolume masked = apply_mask_zero_background(v, m);
  for (const auto& s : extract_slices(masked, m, 24, "p")) {
    s.validate();
    // zero background: pixels outside the mask window are exactly 0
    const int z = s.slice_index;
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const int vx = s.crop_x0 + x, vy = s.crop_y0 + y;
        const bool inside = vx >= 0 && vx < 24 && vy >= 0 && vy < 24 && m.at(vx, vy, z);
        if (!inside) CHECK(s.at(x, y) == 0.0f);
      }
  }
}

TEST_CASE("volume and mask round-trips are bit-exact") {
  Rng rng(13);
  const auto dir = temp_dir("roundtrip");
  CtVolume v = random_volume({7, 6, 5}, {0.8, 1.1, 2.0}, rng);
  v.grid.origin = {-12.5, 3.25, 7.75};
  const std::string vp = (dir / "vol.vol").string();
  write_volume(vp, v);
  const CtVolume v2 = read_volume(vp);
  CHECK(v2.grid.dims == v.grid.dims);
  CHECK(v2.grid.spacing == v.grid.spacing);
  CHECK(v2.grid.origin == v.grid.origin);
  CHECK(v2.data == v.data);

  BinaryMask m = make_mask(v.grid, 0);
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = rng.uniform() < 0.5;
  const std::string mp = (dir / "mask.msk").string();
  write_mask(mp, m);
  const BinaryMask m2 = read_mask(mp);
  CHECK(m2.grid.dims == m.grid.dims);
  CHECK(m2.data == m.data);

  SliceImage s;
  s.height = 9;
  s.width = 11;
  s.data.resize(99);
  for (auto& x : s.data) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  s.label = SliceLabel::infected;
  s.volume_id = "v9";
  s.slice_index = 4;
  s.crop_x0 = -3;
  s.crop_y0 = 2;
  const std::string sp = (dir / "img.slc").string();
  write_slice(sp, s);
  const SliceImage s2 = read_slice(sp);
  CHECK(s2.data == s.data);
  CHECK(s2.label == s.label);
  CHECK(s2.volume_id == s.volume_id);
  CHECK(s2.slice_index == s.slice_index);
  CHECK(s2.crop_x0 == s.crop_x0);
  CHECK(s2.crop_y0 == s.crop_y0);
}

TEST_CASE("truncated payload raises size mismatch") {
  Rng rng(17);
  const auto dir = temp_dir("truncated");
  const CtVolume v = random_volume({4, 4, 4}, {1, 1, 1}, rng);
  const std::string vp = (dir / "t.vol").string();
  write_volume(vp, v);
  fs::resize_file(vp + ".raw", 10);
  CHECK_THROWS_WITH_AS(read_volume(vp), doctest::Contains("size mismatch"), std::runtime_error);
}

TEST_CASE("malformed header rejected") {
  const auto dir = temp_dir("badheader");
  const std::string p = (dir / "bad.vol").string();
  std::ofstream(p) << "{not json";
  CHECK_THROWS_AS(read_volume(p), std::runtime_error);
}

TEST_CASE("all -1 slice renders an all-black PNG") {
  SliceImage s;
  s.height = 4;
  s.width = 4;
  s.data.assign(16, -1.0f);
  const auto dir = temp_dir("png");
  const std::string p = (dir / "black.png").string();
  write_slice_png(p, s);
  std::ifstream f(p, std::ios::binary);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() > 8);
  const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  for (int i = 0; i < 8; ++i) CHECK(bytes[i] == sig[i]);
  // decode through zlib is covered in the CLI smoke; here check the mapping
  // endpoint via the encoder contract: value -1 -> pixel 0, carried by a
  // scanline of zeros that deflate represents compactly
  CHECK(bytes.size() < 100);
}

TEST_CASE("manifest round-trip and slice loading") {
  const auto dir = temp_dir("manifest");
  SliceImage s;
  s.height = 3;
  s.width = 3;
  s.data.assign(9, 0.5f);
  s.volume_id = "m0";
  s.slice_index = 7;
  write_slice((dir / "a.slc").string(), s);
  s.slice_index = 8;
  write_slice((dir / "b.slc").string(), s);

  std::vector<ManifestEntry> entries{{"a.slc", 7, SliceLabel::healthy},
                                     {"b.slc", 8, SliceLabel::infected}};
  const std::string mp = (dir / "manifest.json").string();
  write_manifest(mp, entries);
  const auto back = read_manifest(mp);
  REQUIRE(back.size() == 2);
  CHECK(back[0].path == "a.slc");
  CHECK(back[0].label == SliceLabel::healthy);
  CHECK(back[1].slice_index == 8);

  const auto slices = load_manifest_slices(mp);
  REQUIRE(slices.size() == 2);
  CHECK(slices[0].label == SliceLabel::healthy);
  CHECK(slices[1].label == SliceLabel::infected);
}
