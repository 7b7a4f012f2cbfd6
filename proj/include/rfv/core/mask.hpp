#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rfv/core/image.hpp"

namespace rfv {

struct Rect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  [[nodiscard]] int area() const { return height * width; }
  [[nodiscard]] int bottom() const { return top + height; }
  [[nodiscard]] int right() const { return left + width; }
  [[nodiscard]] bool fits(int image_height, int image_width) const {
    return top >= 0 && left >= 0 && height > 0 && width > 0 && bottom() <= image_height &&
           right() <= image_width;
  }
  bool operator==(const Rect &) const = default;
};

/// Binary H x W pixel-selection grid restricting where a perturbation may act.
/// Applies to every channel of the covered pixels.
class Mask {
public:
  Mask() = default;
  Mask(int height, int width);

  static Mask rectangle(int height, int width, const Rect &rect);
  static Mask full(int height, int width);
  static Mask from_grid(int height, int width, std::vector<std::uint8_t> grid);

  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] bool at(int y, int x) const { return grid_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool on) { grid_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0; }

  [[nodiscard]] const std::vector<std::uint8_t> &grid() const { return grid_; }
  [[nodiscard]] std::size_t count() const;
  [[nodiscard]] double area_fraction() const;
  [[nodiscard]] bool empty() const { return count() == 0; }

  /// Set when the mask was built as a rectangle (kept through copies).
  [[nodiscard]] const std::optional<Rect> &rect() const { return rect_; }
  /// True when the support is exactly one contiguous axis-aligned rectangle.
  [[nodiscard]] bool is_rectangle() const;

  /// Flat CHW indices of all covered pixels for an image with `channels` channels,
  /// ordered channel-major then row-major.
  [[nodiscard]] std::vector<std::size_t> pixel_indices(int channels) const;

  /// Human-readable descriptor, e.g. "rect:12,8,10,10" or "grid:<count>".
  [[nodiscard]] std::string descriptor() const;

  bool operator==(const Mask &other) const {
    return height_ == other.height_ && width_ == other.width_ && grid_ == other.grid_;
  }

private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> grid_;
  std::optional<Rect> rect_;
};

/// Copies `source` into `image` wherever the mask is set.
void paste(LabeledImage &image, const Mask &mask, const LabeledImage &source);

/// Overwrites masked pixels with `values` laid out as in Mask::pixel_indices.
void paste_values(LabeledImage &image, const Mask &mask, const std::vector<float> &values);
std::vector<float> extract_values(const LabeledImage &image, const Mask &mask);

/// True if every pixel outside the mask is bit-identical between the two images.
bool unchanged_outside(const LabeledImage &original, const LabeledImage &modified, const Mask &mask);

} // namespace rfv
