#pragma once

#include <string>
#include <vector>

#include "ctseg/cyclegan.hpp"
#include "ctseg/imgvol.hpp"
#include "ctseg/postproc.hpp"

namespace ctseg {

struct SegmentResult {
  BinaryMask pred;           // lesion mask on the input volume grid
  int slices_processed = 0;
  int degenerate_slices = 0;  // slices where binarization had no signal
};

// Full per-volume segmentation: preprocess (window, zero background, crop),
// synthesize a healthy counterpart per slice with G_XY, run the
// post-processing chain, and stack the 2-D masks back onto the volume grid.
SegmentResult segment_volume(const Generator<float>& g_xy, const CtVolume& infected,
                             const BinaryMask& lung, const PostprocParams& params,
                             int crop_side, double window_lo = -800,
                             double window_hi = 100);

// Same chain but the "synthetic" healthy slices come from a real paired
// healthy volume; isolates post-processing quality from GAN quality.
SegmentResult segment_volume_with_reference(const CtVolume& infected,
                                            const CtVolume& healthy_reference,
                                            const BinaryMask& lung,
                                            const PostprocParams& params, int crop_side,
                                            double window_lo = -800,
                                            double window_hi = 100);

// Grayscale overlay: slice rendered to mid-gray range, ground-truth contour
// bright, prediction contour white.
void write_overlay_png(const std::string& path, const SliceImage& slice,
                       const Mask2D& pred, const Mask2D& gt);

}  // namespace ctseg
