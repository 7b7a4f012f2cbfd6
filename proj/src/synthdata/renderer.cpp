#include "rfv/synthdata/renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace rfv::synth {

SyntheticFactorSpec SyntheticFactorSpec::standard(ImageShape image) {
  SyntheticFactorSpec spec;
  spec.image = image;
  spec.class_ranges.resize(kClassFactorCount);
  spec.class_ranges[kFaceWidth] = {0.24, 0.34};
  spec.class_ranges[kFaceHeight] = {0.30, 0.40};
  spec.class_ranges[kEyeSpacing] = {0.08, 0.14};
  spec.class_ranges[kEyeSize] = {0.035, 0.06};
  spec.class_ranges[kSkinRed] = {0.45, 0.95};
  spec.class_ranges[kSkinGreen] = {0.35, 0.80};
  spec.class_ranges[kSkinBlue] = {0.25, 0.70};
  spec.class_ranges[kMouthCurve] = {-1.0, 1.0};
  spec.class_ranges[kNoseLength] = {0.05, 0.12};
  spec.class_ranges[kIrisTone] = {0.0, 0.6};
  spec.content_ranges.resize(kContentFactorCount);
  spec.content_ranges[kShiftX] = {-0.08, 0.08};
  spec.content_ranges[kShiftY] = {-0.06, 0.06};
  spec.content_ranges[kRotation] = {-0.35, 0.35};
  spec.content_ranges[kScale] = {0.85, 1.10};
  spec.content_ranges[kExpression] = {-1.0, 1.0};
  spec.content_ranges[kBackgroundSeed] = {0.0, 1.0e6};
  spec.content_ranges[kBackgroundLevel] = {0.15, 0.85};
  spec.content_ranges[kLighting] = {-0.3, 0.3};
  return spec;
}

void SyntheticFactorSpec::validate() const {
  if (image.height < 8 || image.width < 8 || (image.channels != 1 && image.channels != 3))
    throw ConfigError("synthetic images need H, W >= 8 and 1 or 3 channels, got " + image.to_string());
  if (class_ranges.size() != kClassFactorCount || content_ranges.size() != kContentFactorCount)
    throw ConfigError("synthetic factor spec has the wrong number of factor ranges");
  for (const auto &r : class_ranges)
    if (!(r.lo <= r.hi))
      throw ConfigError("class factor range with lo > hi");
  for (const auto &r : content_ranges)
    if (!(r.lo <= r.hi))
      throw ConfigError("content factor range with lo > hi");
  if (eye_line <= 0.0 || eye_line >= 1.0)
    throw ConfigError("eye_line must lie in (0,1)");
}

Rect SyntheticFactorSpec::eye_region(int height, int width) const {
  const double cy = eye_line * image.height;
  const double cx = 0.5 * image.width;
  Rect r;
  r.height = height;
  r.width = width;
  r.top = static_cast<int>(std::lround(cy - 0.5 * height));
  r.left = static_cast<int>(std::lround(cx - 0.5 * width));
  r.top = std::clamp(r.top, 0, std::max(0, image.height - height));
  r.left = std::clamp(r.left, 0, std::max(0, image.width - width));
  return r;
}

void to_json(nlohmann::json &j, const SyntheticFactorSpec &spec) {
  auto ranges = [](const std::vector<Range> &rs) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto &r : rs)
      a.push_back({r.lo, r.hi});
    return a;
  };
  j = nlohmann::json{{"image", {spec.image.height, spec.image.width, spec.image.channels}},
                     {"class_ranges", ranges(spec.class_ranges)},
                     {"content_ranges", ranges(spec.content_ranges)},
                     {"eye_line", spec.eye_line}};
}

void from_json(const nlohmann::json &j, SyntheticFactorSpec &spec) {
  const auto &im = j.at("image");
  spec = SyntheticFactorSpec::standard(ImageShape{im.at(0).get<int>(), im.at(1).get<int>(), im.at(2).get<int>()});
  auto read = [](const nlohmann::json &a, std::vector<Range> &out) {
    out.clear();
    for (const auto &r : a)
      out.push_back(Range{r.at(0).get<double>(), r.at(1).get<double>()});
  };
  if (j.contains("class_ranges"))
    read(j.at("class_ranges"), spec.class_ranges);
  if (j.contains("content_ranges"))
    read(j.at("content_ranges"), spec.content_ranges);
  if (j.contains("eye_line"))
    spec.eye_line = j.at("eye_line").get<double>();
  spec.validate();
}

std::vector<double> sample_class(const SyntheticFactorSpec &spec, Rng &rng) {
  std::vector<double> out;
  for (const auto &r : spec.class_ranges)
    out.push_back(r.lo + (r.hi - r.lo) * uniform01(rng));
  return out;
}

std::vector<double> sample_content(const SyntheticFactorSpec &spec, Rng &rng) {
  std::vector<double> out;
  for (const auto &r : spec.content_ranges)
    out.push_back(r.lo + (r.hi - r.lo) * uniform01(rng));
  out[kBackgroundSeed] = std::floor(out[kBackgroundSeed]);
  return out;
}

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Coverage of a shape with signed distance `sd` (positive inside) for a pixel of size `pix`.
double coverage(double sd, double pix) { return clamp01(sd / pix + 0.5); }

using Rgb = std::array<double, 3>;

Rgb mix(const Rgb &under, const Rgb &over, double alpha) {
  return {under[0] + alpha * (over[0] - under[0]), under[1] + alpha * (over[1] - under[1]),
          under[2] + alpha * (over[2] - under[2])};
}

struct Wave {
  double fx, fy, phase;
  std::array<double, 3> amplitude;
};

std::array<Wave, 3> background_waves(double seed) {
  Rng rng(static_cast<std::uint64_t>(seed) * 2654435761ull + 17ull);
  std::array<Wave, 3> waves{};
  for (auto &w : waves) {
    w.fx = -6.0 + 12.0 * uniform01(rng);
    w.fy = -6.0 + 12.0 * uniform01(rng);
    w.phase = 2.0 * std::numbers::pi * uniform01(rng);
    for (auto &a : w.amplitude)
      a = 0.04 + 0.1 * uniform01(rng);
  }
  return waves;
}

void check_ranges(const std::vector<double> &values, const std::vector<Range> &ranges, const char *what) {
  if (values.size() != ranges.size())
    throw ConfigError(std::string(what) + " code has " + std::to_string(values.size()) + " entries, expected " +
                      std::to_string(ranges.size()));
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i]) || !ranges[i].contains(values[i]))
      throw ConfigError(std::string(what) + " factor " + std::to_string(i) + " = " + std::to_string(values[i]) +
                        " outside [" + std::to_string(ranges[i].lo) + ", " + std::to_string(ranges[i].hi) + "]");
}

/// Renders the face layer; returns RGB colour per pixel and the face coverage.
template <typename Visit>
void rasterize(const std::vector<double> &cl, const std::vector<double> &co, const SyntheticFactorSpec &spec,
               Visit &&visit) {
  const int H = spec.image.height;
  const int W = spec.image.width;
  const double cos_r = std::cos(co[kRotation]);
  const double sin_r = std::sin(co[kRotation]);
  const double scale = co[kScale];
  const double pix = 1.0 / (std::max(H, W) * scale);
  const double fw = cl[kFaceWidth];
  const double fh = cl[kFaceHeight];
  const double face_cy = 0.02;
  const double eye_y = spec.eye_line - 0.5;
  const double es = cl[kEyeSpacing];
  const double er = cl[kEyeSize];
  const double expr = co[kExpression];
  const Rgb skin{cl[kSkinRed], cl[kSkinGreen], cl[kSkinBlue]};
  const Rgb sclera{0.96, 0.96, 0.94};
  const double it = cl[kIrisTone];
  const Rgb iris{0.1 + it, 0.08 + 0.7 * it, 0.05 + 0.4 * it};
  const Rgb brow{0.18 * skin[0], 0.15 * skin[1], 0.12 * skin[2]};
  const Rgb lip{0.75 * skin[0] + 0.2, 0.35 * skin[1], 0.35 * skin[2]};
  const double brow_y = eye_y - 1.9 * er - 0.015 * expr;
  const double mouth_y = 0.15 + 0.012 * expr;
  const double mouth_w = 0.09 + 0.015 * expr;
  const double mouth_t = 0.011 + 0.006 * std::max(expr, 0.0);
  const double nose_top = eye_y + 0.03;
  const double nose_bottom = nose_top + cl[kNoseLength];

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double u = (x + 0.5) / W - 0.5 - co[kShiftX];
      const double v = (y + 0.5) / H - 0.5 - co[kShiftY];
      const double a = (cos_r * u + sin_r * v) / scale;
      const double b = (-sin_r * u + cos_r * v) / scale;

      const double q = std::hypot(a / fw, (b - face_cy) / fh);
      const double alpha = coverage((1.0 - q) * std::min(fw, fh), pix);
      if (alpha <= 0.0) {
        visit(y, x, Rgb{0, 0, 0}, 0.0);
        continue;
      }
      const double shade = std::clamp(1.0 + co[kLighting] * a / fw, 0.3, 1.4);
      Rgb c{skin[0] * shade, skin[1] * shade, skin[2] * shade};

      for (double side : {-1.0, 1.0}) {
        const double d = std::hypot(a - side * es, b - eye_y);
        c = mix(c, sclera, coverage(er - d, pix));
        c = mix(c, iris, coverage(0.55 * er - d, pix));
        const double bx = std::abs(a - side * es);
        const double brow_sd = std::min(1.2 * er - bx, 0.012 - std::abs(b - brow_y));
        c = mix(c, brow, coverage(brow_sd, pix));
      }
      const double nose_sd =
          std::min(0.008 - std::abs(a), std::min(b - nose_top, nose_bottom - b));
      c = mix(c, Rgb{0.72 * c[0], 0.72 * c[1], 0.72 * c[2]}, coverage(nose_sd, pix));

      const double t = a / mouth_w;
      if (std::abs(t) <= 1.2) {
        const double curve_y = mouth_y + cl[kMouthCurve] * 0.03 * (1.0 - t * t);
        const double mouth_sd = std::min(mouth_t - std::abs(b - curve_y), (1.0 - std::abs(t)) * mouth_w);
        c = mix(c, lip, coverage(mouth_sd, pix));
      }
      visit(y, x, c, alpha);
    }
  }
}

} // namespace

LabeledImage render(const std::vector<double> &class_params, const std::vector<double> &content_params,
                    const SyntheticFactorSpec &spec, int identity) {
  spec.validate();
  check_ranges(class_params, spec.class_ranges, "class");
  check_ranges(content_params, spec.content_ranges, "content");

  LabeledImage img(spec.image, identity);
  img.latents = LatentPair{class_params, content_params};
  const auto waves = background_waves(content_params[kBackgroundSeed]);
  const double level = content_params[kBackgroundLevel];
  const int H = spec.image.height;
  const int W = spec.image.width;
  const int C = spec.image.channels;

  rasterize(class_params, content_params, spec, [&](int y, int x, const Rgb &face, double alpha) {
    const double u = (x + 0.5) / W - 0.5;
    const double v = (y + 0.5) / H - 0.5;
    Rgb bg{level, level, level};
    for (const auto &w : waves) {
      const double s = std::sin(2.0 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
      for (int ch = 0; ch < 3; ++ch)
        bg[ch] += w.amplitude[ch] * s;
    }
    const Rgb px = mix(bg, face, alpha);
    if (C == 3) {
      for (int ch = 0; ch < 3; ++ch)
        img.at(ch, y, x) = static_cast<float>(clamp01(px[ch]));
    } else {
      img.at(0, y, x) = static_cast<float>(clamp01((px[0] + px[1] + px[2]) / 3.0));
    }
  });
  return img;
}

Mask foreground(const std::vector<double> &class_params, const std::vector<double> &content_params,
                const SyntheticFactorSpec &spec) {
  spec.validate();
  check_ranges(class_params, spec.class_ranges, "class");
  check_ranges(content_params, spec.content_ranges, "content");
  Mask m(spec.image.height, spec.image.width);
  rasterize(class_params, content_params, spec,
            [&](int y, int x, const Rgb &, double alpha) { m.set(y, x, alpha > 0.0); });
  return m;
}

const std::vector<double> &oracle_class(const LabeledImage &image) {
  if (!image.latents)
    throw ConfigError("image has no ground-truth latents; the class oracle needs synthetic data");
  return image.latents->class_code;
}

const std::vector<double> &oracle_content(const LabeledImage &image) {
  if (!image.latents)
    throw ConfigError("image has no ground-truth latents; the content oracle needs synthetic data");
  return image.latents->content_code;
}

} // namespace rfv::synth
