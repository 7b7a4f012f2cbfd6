#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "rfv/core/image.hpp"
#include "rfv/core/mask.hpp"
#include "rfv/core/rng.hpp"

namespace rfv::synth {

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  [[nodiscard]] bool contains(double v) const { return v >= lo && v <= hi; }
  bool operator==(const Range &) const = default;
};

/// Indices into the class code.
enum ClassFactor : int {
  kFaceWidth = 0,
  kFaceHeight,
  kEyeSpacing,
  kEyeSize,
  kSkinRed,
  kSkinGreen,
  kSkinBlue,
  kMouthCurve,
  kNoseLength,
  kIrisTone,
  kClassFactorCount
};

/// Indices into the content code.
enum ContentFactor : int {
  kShiftX = 0,
  kShiftY,
  kRotation,
  kScale,
  kExpression,
  kBackgroundSeed,
  kBackgroundLevel,
  kLighting,
  kContentFactorCount
};

/// Parameter ranges of the procedural face renderer. Class factors (identity geometry and
/// tone) and content factors (pose proxy, expression, background, lighting) are disjoint.
struct SyntheticFactorSpec {
  ImageShape image{64, 64, 3};
  std::vector<Range> class_ranges;
  std::vector<Range> content_ranges;
  /// Vertical position of the canonical eye line, as a fraction of image height from the top.
  double eye_line = 0.42;

  static SyntheticFactorSpec standard(ImageShape image = {64, 64, 3});
  void validate() const;

  /// Rectangle of the given pixel size centered on the canonical eye midpoint.
  [[nodiscard]] Rect eye_region(int height, int width) const;
  bool operator==(const SyntheticFactorSpec &) const = default;
};

void to_json(nlohmann::json &j, const SyntheticFactorSpec &spec);
void from_json(const nlohmann::json &j, SyntheticFactorSpec &spec);

/// Draws uniformly from the class / content ranges. The background seed is integer-valued.
std::vector<double> sample_class(const SyntheticFactorSpec &spec, Rng &rng);
std::vector<double> sample_content(const SyntheticFactorSpec &spec, Rng &rng);

/// Pure function of (class, content, spec). Throws ConfigError for out-of-range parameters.
/// The result carries the generating parameters as its latents.
LabeledImage render(const std::vector<double> &class_params, const std::vector<double> &content_params,
                    const SyntheticFactorSpec &spec, int identity = -1);

/// Pixels touched by the face (coverage > 0) for the given parameters. Everything else is
/// background.
Mask foreground(const std::vector<double> &class_params, const std::vector<double> &content_params,
                const SyntheticFactorSpec &spec);

/// Ground-truth factor lookup. Throws ConfigError when the image has no latents.
const std::vector<double> &oracle_class(const LabeledImage &image);
const std::vector<double> &oracle_content(const LabeledImage &image);

} // namespace rfv::synth
