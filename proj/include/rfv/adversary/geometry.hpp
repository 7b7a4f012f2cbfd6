#pragma once

#include <vector>

#include "rfv/core/mask.hpp"
#include "rfv/synthdata/renderer.hpp"

namespace rfv::adv {

/// Pixel sizes of the evaluation and training masks. Defaults are for 64x64 images;
/// `scaled_for` rescales them proportionally for other resolutions.
struct MaskGeometry {
  int eyeglasses_width = 32;
  int eyeglasses_height = 16;
  int square_size = 10;
  int square_stride = 5;
  int eye_patch_width = 32;
  int eye_patch_height = 12;
  int doa_size = 20;
  int doa_stride = 5;

  static MaskGeometry scaled_for(const ImageShape &shape);
};

/// Top-left offsets of a window of `size` sliding with `stride` over `extent` pixels:
/// 0, stride, 2*stride, ... plus a final window flush with the far edge when the stride does
/// not divide (extent - size). Yields ceil((extent - size) / stride) + 1 offsets.
std::vector<int> grid_offsets(int extent, int size, int stride);

/// All windows of the search grid in row-major order.
std::vector<Rect> grid_windows(int height, int width, int size, int stride);

/// Glasses-frame mask (two rounded rims, bridge, temple stubs) in an eyeglasses_width x
/// eyeglasses_height footprint centered on the eye line.
Mask eyeglasses_mask(const synth::SyntheticFactorSpec &spec, const MaskGeometry &geometry);

/// eye_patch_width x eye_patch_height rectangle over the eye region.
Mask eye_patch_mask(const synth::SyntheticFactorSpec &spec, const MaskGeometry &geometry);

} // namespace rfv::adv
