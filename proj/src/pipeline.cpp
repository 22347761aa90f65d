#include "ctseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "ctseg/png_io.hpp"

namespace ctseg {

namespace {

void paste_slice_mask(BinaryMask& pred, const Mask2D& mask, const SliceImage& slice) {
  const auto& dims = pred.grid.dims;
  const int z = slice.slice_index;
  for (int y = 0; y < mask.h; ++y) {
    const int vy = slice.crop_y0 + y;
    if (vy < 0 || vy >= dims[1]) continue;
    for (int x = 0; x < mask.w; ++x) {
      const int vx = slice.crop_x0 + x;
      if (vx < 0 || vx >= dims[0]) continue;
      if (mask.at(x, y)) pred.at(vx, vy, z) = 1;
    }
  }
}

template <class SynthFn>
SegmentResult run_segmentation(const CtVolume& infected, const BinaryMask& lung,
                               const PostprocParams& params, int crop_side,
                               double window_lo, double window_hi, SynthFn synth) {
  if (!infected.grid.same_grid(lung.grid))
    throw std::invalid_argument("segment: volume and lung grids differ");
  const CtVolume norm = window_normalize(infected, window_lo, window_hi);
  const CtVolume masked = apply_mask_zero_background(norm, lung);
  const auto slices = extract_slices(masked, lung, crop_side, "segment");

  SegmentResult res;
  res.pred.grid = infected.grid;
  res.pred.data.assign(infected.grid.voxel_count(), 0);
  for (const auto& slice : slices) {
    const SliceImage synthetic = synth(slice);
    const Mask2D lung2d = mask_slice_window(lung, slice);
    const PipelineResult pr = postprocess_pipeline(slice, synthetic, lung2d, params);
    if (pr.degenerate) ++res.degenerate_slices;
    paste_slice_mask(res.pred, pr.mask, slice);
    ++res.slices_processed;
  }
  return res;
}

}  // namespace

SegmentResult segment_volume(const Generator<float>& g_xy, const CtVolume& infected,
                             const BinaryMask& lung, const PostprocParams& params,
                             int crop_side, double window_lo, double window_hi) {
  return run_segmentation(infected, lung, params, crop_side, window_lo, window_hi,
                          [&](const SliceImage& s) { return synthesize_healthy(g_xy, s); });
}

SegmentResult segment_volume_with_reference(const CtVolume& infected,
                                            const CtVolume& healthy_reference,
                                            const BinaryMask& lung,
                                            const PostprocParams& params, int crop_side,
                                            double window_lo, double window_hi) {
  if (!infected.grid.same_grid(healthy_reference.grid))
    throw std::invalid_argument("segment: infected and reference grids differ");
  const CtVolume ref_norm = window_normalize(healthy_reference, window_lo, window_hi);
  const CtVolume ref_masked = apply_mask_zero_background(ref_norm, lung);
  const auto ref_slices = extract_slices(ref_masked, lung, crop_side, "reference");
  std::map<int, const SliceImage*> by_index;
  for (const auto& s : ref_slices) by_index[s.slice_index] = &s;

  return run_segmentation(infected, lung, params, crop_side, window_lo, window_hi,
                          [&](const SliceImage& s) -> SliceImage {
                            auto it = by_index.find(s.slice_index);
                            if (it == by_index.end())
                              throw std::runtime_error("segment: reference slice missing");
                            return *it->second;
                          });
}

namespace {

Mask2D contour_of(const Mask2D& m) {
  const Mask2D inner = erode(m);
  Mask2D edge = m;
  for (size_t i = 0; i < edge.v.size(); ++i) edge.v[i] = m.v[i] && !inner.v[i];
  return edge;
}

}  // namespace

void write_overlay_png(const std::string& path, const SliceImage& slice,
                       const Mask2D& pred, const Mask2D& gt) {
  if (pred.h != slice.height || pred.w != slice.width || gt.h != slice.height ||
      gt.w != slice.width)
    throw std::invalid_argument("write_overlay_png: shape mismatch");
  std::vector<uint8_t> px(slice.data.size());
  for (size_t i = 0; i < px.size(); ++i) {
    const double v = (static_cast<double>(slice.data[i]) + 1.0) * 0.5 * 170.0;
    px[i] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 170.0)));
  }
  const Mask2D gt_edge = contour_of(gt);
  const Mask2D pred_edge = contour_of(pred);
  for (size_t i = 0; i < px.size(); ++i) {
    if (gt_edge.v[i]) px[i] = 210;    // ground truth: light gray
    if (pred_edge.v[i]) px[i] = 255;  // prediction: white
  }
  write_png_gray(path, slice.width, slice.height, px);
}

}  // namespace ctseg
