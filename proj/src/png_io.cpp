#include "ctseg/png_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ctseg {

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char tag[4],
               const std::vector<uint8_t>& payload) {
  put_u32_be(out, static_cast<uint32_t>(payload.size()));
  const size_t crc_start = out.size();
  out.insert(out.end(), tag, tag + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  put_u32_be(out, crc);
}

std::vector<uint8_t> zlib_deflate(const std::vector<uint8_t>& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> buf(bound);
  if (compress2(buf.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png: deflate failed");
  buf.resize(bound);
  return buf;
}

}  // namespace

void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels) {
  if (width < 1 || height < 1 ||
      pixels.size() != static_cast<size_t>(width) * height)
    throw std::invalid_argument("write_png_gray: bad dimensions");

  // filter byte 0 (None) per scanline
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(height) * (width + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), pixels.begin() + static_cast<size_t>(y) * width,
               pixels.begin() + static_cast<size_t>(y + 1) * width);
  }

  std::vector<uint8_t> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(width));
  put_u32_be(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // color type: grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", zlib_deflate(raw));
  put_chunk(png, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

void write_slice_png(const std::string& path, const SliceImage& slice) {
  slice.validate();
  std::vector<uint8_t> px(slice.data.size());
  for (size_t i = 0; i < slice.data.size(); ++i) {
    const double v = (static_cast<double>(slice.data[i]) + 1.0) * 0.5 * 255.0;
    px[i] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
  }
  write_png_gray(path, slice.width, slice.height, px);
}

}  // namespace ctseg
