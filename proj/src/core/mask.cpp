#include "rfv/core/mask.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

namespace rfv {

Mask::Mask(int height, int width)
    : height_(height), width_(width), grid_(static_cast<std::size_t>(height) * width, 0) {
  if (height <= 0 || width <= 0)
    throw ShapeError("mask dimensions must be positive");
}

Mask Mask::rectangle(int height, int width, const Rect &rect) {
  if (!rect.fits(height, width))
    throw ShapeError("rectangle does not fit inside a " + std::to_string(height) + "x" +
                     std::to_string(width) + " mask");
  Mask m(height, width);
  for (int y = rect.top; y < rect.bottom(); ++y)
    for (int x = rect.left; x < rect.right(); ++x)
      m.set(y, x, true);
  m.rect_ = rect;
  return m;
}

Mask Mask::full(int height, int width) {
  return rectangle(height, width, Rect{0, 0, height, width});
}

Mask Mask::from_grid(int height, int width, std::vector<std::uint8_t> grid) {
  Mask m(height, width);
  if (grid.size() != m.grid_.size())
    throw ShapeError("mask grid size mismatch");
  for (auto &g : grid) {
    if (g > 1)
      throw ShapeError("mask grid entries must be 0 or 1");
  }
  m.grid_ = std::move(grid);
  return m;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(grid_.begin(), grid_.end(), std::uint8_t{1}));
}

double Mask::area_fraction() const {
  if (grid_.empty())
    return 0.0;
  return static_cast<double>(count()) / static_cast<double>(grid_.size());
}

bool Mask::is_rectangle() const {
  int top = height_, left = width_, bottom = -1, right = -1;
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      if (at(y, x)) {
        top = std::min(top, y);
        left = std::min(left, x);
        bottom = std::max(bottom, y);
        right = std::max(right, x);
      }
  if (bottom < 0)
    return false;
  const auto box = static_cast<std::size_t>(bottom - top + 1) * (right - left + 1);
  return box == count();
}

std::vector<std::size_t> Mask::pixel_indices(int channels) const {
  std::vector<std::size_t> out;
  out.reserve(count() * channels);
  const auto plane = grid_.size();
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p)
      if (grid_[p])
        out.push_back(c * plane + p);
  return out;
}

std::string Mask::descriptor() const {
  if (rect_)
    return "rect:" + std::to_string(rect_->top) + "," + std::to_string(rect_->left) + "," +
           std::to_string(rect_->height) + "," + std::to_string(rect_->width);
  return "grid:" + std::to_string(count());
}

namespace {
void check_compatible(const LabeledImage &image, const Mask &mask) {
  if (image.shape.height != mask.height() || image.shape.width != mask.width())
    throw ShapeError("mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                     " does not match image " + image.shape.to_string());
}
} // namespace

void paste(LabeledImage &image, const Mask &mask, const LabeledImage &source) {
  check_compatible(image, mask);
  if (source.shape != image.shape)
    throw ShapeError("paste source shape mismatch");
  for (auto idx : mask.pixel_indices(image.shape.channels))
    image.pixels[idx] = source.pixels[idx];
}

void paste_values(LabeledImage &image, const Mask &mask, const std::vector<float> &values) {
  check_compatible(image, mask);
  const auto idx = mask.pixel_indices(image.shape.channels);
  if (idx.size() != values.size())
    throw ShapeError("patch value count does not match mask support");
  for (std::size_t i = 0; i < idx.size(); ++i)
    image.pixels[idx[i]] = values[i];
}

std::vector<float> extract_values(const LabeledImage &image, const Mask &mask) {
  check_compatible(image, mask);
  std::vector<float> out;
  for (auto idx : mask.pixel_indices(image.shape.channels))
    out.push_back(image.pixels[idx]);
  return out;
}

bool unchanged_outside(const LabeledImage &original, const LabeledImage &modified, const Mask &mask) {
  check_compatible(original, mask);
  if (original.shape != modified.shape)
    return false;
  const auto plane = original.shape.plane();
  for (int c = 0; c < original.shape.channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      if (mask.grid()[p])
        continue;
      const auto i = c * plane + p;
      if (std::memcmp(&original.pixels[i], &modified.pixels[i], sizeof(float)) != 0)
        return false;
    }
  return true;
}

} // namespace rfv
