#include "rfv/core/image.hpp"

#include <algorithm>
#include <cmath>

namespace rfv {

std::string ImageShape::to_string() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

bool LabeledImage::in_unit_range() const {
  return std::all_of(pixels.begin(), pixels.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

void LabeledImage::validate() const {
  if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0)
    throw ShapeError("image shape must be positive, got " + shape.to_string());
  if (pixels.size() != shape.size())
    throw ShapeError("pixel buffer has " + std::to_string(pixels.size()) + " values, shape " +
                     shape.to_string() + " needs " + std::to_string(shape.size()));
  if (!in_unit_range())
    throw ShapeError("pixel values must lie in [0,1]");
}

MatrixF to_columns(std::span<const LabeledImage> images) {
  if (images.empty())
    return {};
  const auto rows = static_cast<Eigen::Index>(images.front().pixels.size());
  MatrixF out(rows, static_cast<Eigen::Index>(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (static_cast<Eigen::Index>(images[i].pixels.size()) != rows)
      throw ShapeError("images in a batch must share one shape");
    out.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const VectorF>(images[i].pixels.data(), rows);
  }
  return out;
}

MatrixF to_columns(std::span<const LabeledImage *const> images) {
  if (images.empty())
    return {};
  const auto rows = static_cast<Eigen::Index>(images.front()->pixels.size());
  MatrixF out(rows, static_cast<Eigen::Index>(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (static_cast<Eigen::Index>(images[i]->pixels.size()) != rows)
      throw ShapeError("images in a batch must share one shape");
    out.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const VectorF>(images[i]->pixels.data(), rows);
  }
  return out;
}

VectorF to_column(const LabeledImage &image) {
  return Eigen::Map<const VectorF>(image.pixels.data(), static_cast<Eigen::Index>(image.pixels.size()));
}

LabeledImage from_column(const Eigen::Ref<const VectorF> &column, const LabeledImage &like) {
  LabeledImage out = like;
  if (static_cast<std::size_t>(column.size()) != like.pixels.size())
    throw ShapeError("column size does not match image shape");
  std::copy(column.data(), column.data() + column.size(), out.pixels.begin());
  return out;
}

float max_abs_difference(const LabeledImage &a, const LabeledImage &b) {
  if (a.pixels.size() != b.pixels.size())
    throw ShapeError("cannot compare images of different shapes");
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.pixels.size(); ++i)
    worst = std::max(worst, std::abs(a.pixels[i] - b.pixels[i]));
  return worst;
}

} // namespace rfv
