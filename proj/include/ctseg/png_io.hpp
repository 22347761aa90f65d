#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctseg/imgvol.hpp"

namespace ctseg {

// 8-bit grayscale PNG.
void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels);

// Maps [-1,1] linearly to [0,255] (so -1 renders black) and writes a PNG.
void write_slice_png(const std::string& path, const SliceImage& slice);

}  // namespace ctseg
