#include "rfv/augment/augment.hpp"

#include <algorithm>
#include <cmath>

namespace rfv::aug {

LabeledImage mirror(const LabeledImage &image) {
  LabeledImage out = image;
  out.latents.reset();
  const int W = image.shape.width;
  for (int c = 0; c < image.shape.channels; ++c)
    for (int y = 0; y < image.shape.height; ++y)
      for (int x = 0; x < W; ++x)
        out.at(c, y, x) = image.at(c, y, W - 1 - x);
  return out;
}

LabeledImage shift(const LabeledImage &image, int dy, int dx) {
  if (dy == 0 && dx == 0)
    return image;
  LabeledImage out = image;
  out.latents.reset();
  const int H = image.shape.height;
  const int W = image.shape.width;
  for (int c = 0; c < image.shape.channels; ++c)
    for (int y = 0; y < H; ++y) {
      const int sy = std::clamp(y - dy, 0, H - 1);
      for (int x = 0; x < W; ++x)
        out.at(c, y, x) = image.at(c, sy, std::clamp(x - dx, 0, W - 1));
    }
  return out;
}

LabeledImage random_shift(const LabeledImage &image, Rng &rng, int max_px) {
  if (max_px < 0 || max_px >= std::min(image.shape.height, image.shape.width))
    throw ConfigError("shift bound must satisfy 0 <= max_px < min(H, W)");
  const int dy = uniform_int(rng, -max_px, max_px);
  const int dx = uniform_int(rng, -max_px, max_px);
  return shift(image, dy, dx);
}

Rect sample_rect(int height, int width, const Range &area, const Range &aspect, Rng &rng) {
  if (!(area.lo > 0.0 && area.lo <= area.hi && area.hi <= 1.0))
    throw ConfigError("area range must satisfy 0 < lo <= hi <= 1");
  if (!(aspect.lo > 0.0 && aspect.lo <= aspect.hi))
    throw ConfigError("aspect range must satisfy 0 < lo <= hi");
  const double total = static_cast<double>(height) * width;
  const double log_lo = std::log(aspect.lo);
  const double log_hi = std::log(aspect.hi);
  // Tolerate representation error when the requested range is a single point.
  constexpr double kSlack = 1e-12;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double a = (area.lo + (area.hi - area.lo) * uniform01(rng)) * total;
    const double r = std::exp(log_lo + (log_hi - log_lo) * uniform01(rng));
    const int h = std::max(1, static_cast<int>(std::lround(std::sqrt(a / r))));
    const int w = std::max(1, static_cast<int>(std::lround(std::sqrt(a * r))));
    if (h > height || w > width)
      continue;
    const double frac = h * w / total;
    const double ar = static_cast<double>(w) / h;
    if (frac < area.lo - kSlack || frac > area.hi + kSlack || ar < aspect.lo - kSlack || ar > aspect.hi + kSlack)
      continue;
    Rect rect;
    rect.height = h;
    rect.width = w;
    rect.top = uniform_int(rng, 0, height - h);
    rect.left = uniform_int(rng, 0, width - w);
    return rect;
  }
  throw ConfigError("no rectangle with the requested area and aspect fits a " + std::to_string(height) + "x" +
                    std::to_string(width) + " image");
}

Mask sample_mask(const MaskSampler &sampler, int height, int width, Rng &rng) {
  return Mask::rectangle(height, width, sample_rect(height, width, sampler.area, sampler.aspect, rng));
}

void fill_uniform(LabeledImage &image, const Mask &mask, Rng &rng) {
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  for (auto idx : mask.pixel_indices(image.shape.channels))
    image.pixels[idx] = dist(rng);
}

CutoutResult cutout(const LabeledImage &image, const CutoutSpec &spec, Rng &rng) {
  if (!(spec.probability >= 0.0 && spec.probability <= 1.0))
    throw ConfigError("cutout probability must lie in [0,1]");
  CutoutResult result{image, false, Mask(image.shape.height, image.shape.width)};
  if (uniform01(rng) >= spec.probability)
    return result;
  result.applied = true;
  result.region = Mask::rectangle(image.shape.height, image.shape.width,
                                  sample_rect(image.shape.height, image.shape.width, spec.area, spec.aspect, rng));
  result.image.latents.reset();
  fill_uniform(result.image, result.region, rng);
  return result;
}

} // namespace rfv::aug
