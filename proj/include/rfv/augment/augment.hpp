#pragma once

#include "rfv/core/image.hpp"
#include "rfv/core/mask.hpp"
#include "rfv/core/rng.hpp"
#include "rfv/synthdata/renderer.hpp"

namespace rfv::aug {

using synth::Range;

/// Random-pixel cutout: with `probability`, a rectangle of area fraction in `area` and
/// aspect ratio (width / height) in `aspect` is replaced by uniform noise in [0,1].
struct CutoutSpec {
  double probability = 0.5;
  Range area{0.02, 0.2};
  Range aspect{0.5, 2.0};
};

/// Random rectangular perturbation masks.
struct MaskSampler {
  Range area{0.02, 0.1};
  Range aspect{0.5, 2.0};
};

/// Horizontal flip. Geometric augmentations drop the ground-truth latents, which no longer
/// describe the pixels.
LabeledImage mirror(const LabeledImage &image);

/// Translation by (dy, dx) pixels; vacated borders replicate the nearest edge pixel.
LabeledImage shift(const LabeledImage &image, int dy, int dx);

/// Shift drawn uniformly from [-max_px, max_px]^2. Requires max_px < min(H, W).
LabeledImage random_shift(const LabeledImage &image, Rng &rng, int max_px = 5);

struct CutoutResult {
  LabeledImage image;
  bool applied = false;
  Mask region; // all zeros when not applied
};

CutoutResult cutout(const LabeledImage &image, const CutoutSpec &spec, Rng &rng);

/// Area drawn uniformly, aspect log-uniformly, sides rounded to >= 1 px; draws whose rounded
/// rectangle leaves the ranges or the image are rejected, up to 100 attempts (then ConfigError).
Rect sample_rect(int height, int width, const Range &area, const Range &aspect, Rng &rng);

Mask sample_mask(const MaskSampler &sampler, int height, int width, Rng &rng);

/// Overwrites the masked pixels with uniform noise in [0,1].
void fill_uniform(LabeledImage &image, const Mask &mask, Rng &rng);

} // namespace rfv::aug
