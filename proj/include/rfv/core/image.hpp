#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfv/core/tensor.hpp"

namespace rfv {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct ImageShape {
  int height = 64;
  int width = 64;
  int channels = 3;

  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  [[nodiscard]] std::size_t size() const { return plane() * channels; }
  bool operator==(const ImageShape &) const = default;
  [[nodiscard]] std::string to_string() const;
};

/// Generating factors of a synthetic sample: identity-defining class code and
/// pose/expression/background content code.
struct LatentPair {
  std::vector<double> class_code;
  std::vector<double> content_code;
  bool operator==(const LatentPair &) const = default;
};

/// Pixel grid in [0,1], stored channel-major (CHW).
struct LabeledImage {
  ImageShape shape;
  std::vector<float> pixels;
  int identity = -1;
  std::optional<LatentPair> latents;

  LabeledImage() = default;
  LabeledImage(ImageShape s, int id = -1) : shape(s), pixels(s.size(), 0.0f), identity(id) {}

  float &at(int c, int y, int x) { return pixels[index(c, y, x)]; }
  [[nodiscard]] float at(int c, int y, int x) const { return pixels[index(c, y, x)]; }
  [[nodiscard]] std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape.height + y) * shape.width + x;
  }

  [[nodiscard]] bool in_unit_range() const;
  /// Throws ShapeError if the pixel buffer does not match the shape or values leave [0,1].
  void validate() const;
};

/// Packs images as columns of a (C*H*W) x N matrix.
MatrixF to_columns(std::span<const LabeledImage> images);
MatrixF to_columns(std::span<const LabeledImage *const> images);
VectorF to_column(const LabeledImage &image);

/// Copies a column back into an image, keeping label and latents of `like`.
LabeledImage from_column(const Eigen::Ref<const VectorF> &column, const LabeledImage &like);

float max_abs_difference(const LabeledImage &a, const LabeledImage &b);

} // namespace rfv
