#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctseg/imgvol.hpp"

namespace ctseg {

struct Mask2D {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  static Mask2D zeros(int h, int w) {
    return Mask2D{h, w, std::vector<uint8_t>(static_cast<size_t>(h) * w, 0)};
  }
  uint8_t at(int x, int y) const { return v[static_cast<size_t>(y) * w + x]; }
  uint8_t& at(int x, int y) { return v[static_cast<size_t>(y) * w + x]; }
  size_t count() const;
};

struct Image2D {
  int h = 0, w = 0;
  std::vector<float> v;

  float at(int x, int y) const { return v[static_cast<size_t>(y) * w + x]; }
  float& at(int x, int y) { return v[static_cast<size_t>(y) * w + x]; }
};

// Non-negative residual of infected minus synthetic healthy, zero outside the
// lung mask.
struct DifferenceMap {
  int h = 0, w = 0;
  std::vector<float> v;
  Mask2D lung;

  float at(int x, int y) const { return v[static_cast<size_t>(y) * w + x]; }
};

enum class BinarizeMethod { kmeans, otsu };

BinarizeMethod binarize_method_from_string(const std::string& s);
std::string to_string(BinarizeMethod m);

struct PostprocParams {
  BinarizeMethod method = BinarizeMethod::kmeans;
  int median_window = 5;
  double gaussian_sigma = 1.0;
  int k = 2;
  int restarts = 10;
  uint64_t seed = 0;

  void validate() const;
};

// d = max(infected - synthetic, 0) inside the lung, 0 outside.
DifferenceMap subtract(const SliceImage& infected, const SliceImage& synthetic,
                       const Mask2D& lung);

// Median over a window x window neighborhood, replicated borders.
Image2D median_filter(const Image2D& img, int window = 5);
DifferenceMap median_filter(const DifferenceMap& diff, int window = 5);

struct BinarizeResult {
  Mask2D mask;
  bool degenerate = false;  // too few distinct values; mask is empty
  double threshold = 0.0;   // boundary between background and lesion clusters
};

// Lloyd's k-means on the 1-D intensities of in-lung nonzero pixels (zeros
// excluded), seeded k-means++ style inits, best of `restarts` runs by
// within-cluster sum of squares; lesion = cluster with the highest centroid.
BinarizeResult kmeans_binarize(const DifferenceMap& diff, int k = 2, int restarts = 10,
                               uint64_t seed = 0);

// Otsu threshold over a 256-bin histogram of in-lung nonzero values.
BinarizeResult otsu_binarize(const DifferenceMap& diff);

// Convolve the {0,1} mask with a normalized window x window Gaussian
// (replicated borders) and re-binarize at 0.5.
Mask2D gaussian_smooth_mask(const Mask2D& mask, int window = 5, double sigma = 1.0);

// Background 4-components not connected to the image border become foreground.
Mask2D fill_holes(const Mask2D& mask);

// Radius-1 disk = 3x3 cross structuring element; outside the image counts as
// background.
Mask2D erode(const Mask2D& mask);
Mask2D dilate(const Mask2D& mask);

struct PipelineResult {
  Mask2D mask;
  bool degenerate = false;
  double threshold = 0.0;
};

// subtract -> median -> binarize -> gaussian -> fill holes -> erode -> dilate,
// final mask intersected with the lung.
PipelineResult postprocess_pipeline(const SliceImage& infected, const SliceImage& synthetic,
                                    const Mask2D& lung, const PostprocParams& params);

// A 3-D mask restricted to one slice's crop window (lung masks for the 2-D
// chain, ground-truth masks for overlays).
Mask2D mask_slice_window(const BinaryMask& mask, const SliceImage& slice);

}  // namespace ctseg
