#include "rfv/adversary/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace rfv::adv {

MaskGeometry MaskGeometry::scaled_for(const ImageShape &shape) {
  MaskGeometry g;
  const double sy = shape.height / 64.0;
  const double sx = shape.width / 64.0;
  auto scale = [](int v, double s) { return std::max(1, static_cast<int>(std::lround(v * s))); };
  g.eyeglasses_width = scale(g.eyeglasses_width, sx);
  g.eyeglasses_height = scale(g.eyeglasses_height, sy);
  g.square_size = scale(g.square_size, sx);
  g.square_stride = scale(g.square_stride, sx);
  g.eye_patch_width = scale(g.eye_patch_width, sx);
  g.eye_patch_height = scale(g.eye_patch_height, sy);
  g.doa_size = scale(g.doa_size, sx);
  g.doa_stride = scale(g.doa_stride, sx);
  return g;
}

std::vector<int> grid_offsets(int extent, int size, int stride) {
  if (size <= 0 || stride <= 0 || size > extent)
    throw ConfigError("search window " + std::to_string(size) + " with stride " + std::to_string(stride) +
                      " does not fit extent " + std::to_string(extent));
  std::vector<int> out;
  for (int o = 0; o + size <= extent; o += stride)
    out.push_back(o);
  if (out.back() != extent - size)
    out.push_back(extent - size);
  return out;
}

std::vector<Rect> grid_windows(int height, int width, int size, int stride) {
  std::vector<Rect> out;
  for (int top : grid_offsets(height, size, stride))
    for (int left : grid_offsets(width, size, stride))
      out.push_back(Rect{top, left, size, size});
  return out;
}

namespace {

double rounded_box_sd(double px, double py, double cx, double cy, double hx, double hy, double r) {
  const double qx = std::abs(px - cx) - (hx - r);
  const double qy = std::abs(py - cy) - (hy - r);
  const double outside = std::hypot(std::max(qx, 0.0), std::max(qy, 0.0));
  return outside + std::min(std::max(qx, qy), 0.0) - r;
}

} // namespace

Mask eyeglasses_mask(const synth::SyntheticFactorSpec &spec, const MaskGeometry &geometry) {
  const int H = spec.image.height;
  const int W = spec.image.width;
  const Rect foot = spec.eye_region(geometry.eyeglasses_height, geometry.eyeglasses_width);
  if (!foot.fits(H, W))
    throw ConfigError("eyeglasses footprint does not fit the image");
  Mask m(H, W);
  // Design units: a 32 x 16 frame.
  const double sx = foot.width / 32.0;
  const double sy = foot.height / 16.0;
  for (int y = 0; y < foot.height; ++y)
    for (int x = 0; x < foot.width; ++x) {
      const double px = (x + 0.5) / sx;
      const double py = (y + 0.5) / sy;
      bool on = false;
      for (double cx : {8.5, 23.5}) {
        const double sd = rounded_box_sd(px, py, cx, 8.5, 6.5, 5.0, 2.5);
        // rim, with a heavier brow bar along the top
        const double thickness = py < 5.5 ? 2.0 : 1.0;
        on = on || (sd <= 0.0 && sd > -thickness);
      }
      // bridge
      on = on || (px >= 15.0 && px <= 17.0 && py >= 5.0 && py <= 7.0);
      // temple stubs
      on = on || ((px <= 2.0 || px >= 30.0) && py >= 4.5 && py <= 6.5);
      if (on)
        m.set(foot.top + y, foot.left + x, true);
    }
  return m;
}

Mask eye_patch_mask(const synth::SyntheticFactorSpec &spec, const MaskGeometry &geometry) {
  const Rect r = spec.eye_region(geometry.eye_patch_height, geometry.eye_patch_width);
  return Mask::rectangle(spec.image.height, spec.image.width, r);
}

} // namespace rfv::adv
