#include <cmath>
#include <map>

#include <doctest.h>

#include "helpers.hpp"
#include "rfv/augment/augment.hpp"

using namespace rfv;
using namespace rfv::aug;

namespace {

/// Single-channel image whose pixel values encode their coordinates.
LabeledImage ramp(int h, int w) {
  LabeledImage img(ImageShape{h, w, 1});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(0, y, x) = static_cast<float>(y * w + x) / static_cast<float>(h * w);
  return img;
}

double pixel_sum(const LabeledImage &img) {
  double s = 0.0;
  for (float v : img.pixels)
    s += v;
  return s;
}

bool rect_ok(const Rect &r, int h, int w, const Range &area, const Range &aspect) {
  const double a = static_cast<double>(r.area()) / (h * w);
  const double asp = static_cast<double>(r.width) / r.height;
  return r.fits(h, w) && area.contains(a) && aspect.contains(asp);
}

} // namespace

TEST_CASE("mirror is an involution that reverses columns") {
  Rng rng(1);
  const auto img = rfv::test::random_image(ImageShape{7, 9, 3}, rng);
  const auto m = mirror(img);
  CHECK(mirror(m).pixels == img.pixels);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 9; ++x)
        REQUIRE(m.at(c, y, x) == img.at(c, y, 8 - x));
  CHECK(pixel_sum(m) == pixel_sum(img));
}

TEST_CASE("shift replicates edges and stays within bounds") {
  Rng rng(2);
  const auto img = rfv::test::random_image(ImageShape{12, 12, 3}, rng);
  CHECK(shift(img, 0, 0).pixels == img.pixels);
  const auto s = shift(img, 2, -3);
  CHECK(s.at(1, 5, 4) == img.at(1, 3, 7));
  CHECK(s.at(0, 0, 11) == img.at(0, 0, 11));
  CHECK(s.in_unit_range());

  const auto r = ramp(24, 24);
  int max_seen = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto out = random_shift(r, rng, 5);
    REQUIRE(out.in_unit_range());
    // the centre pixel comes from (12 - dy, 12 - dx)
    const int src = static_cast<int>(std::lround(out.at(0, 12, 12) * 24 * 24));
    const int dy = 12 - src / 24;
    const int dx = 12 - src % 24;
    max_seen = std::max({max_seen, std::abs(dy), std::abs(dx)});
    REQUIRE(std::abs(dy) <= 5);
    REQUIRE(std::abs(dx) <= 5);
  }
  CHECK(max_seen == 5);
  CHECK_THROWS_AS(random_shift(r, rng, 24), ConfigError);
}

TEST_CASE("cutout locality and apply rate") {
  Rng rng(3);
  const auto img = rfv::test::random_image(ImageShape{32, 32, 3}, rng);
  CutoutSpec spec;
  int applied = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto r = cutout(img, spec, rng);
    REQUIRE(r.image.in_unit_range());
    if (r.applied) {
      ++applied;
      REQUIRE(r.region.rect().has_value());
      REQUIRE(rect_ok(*r.region.rect(), 32, 32, spec.area, spec.aspect));
      REQUIRE(unchanged_outside(img, r.image, r.region));
    } else {
      REQUIRE(r.region.empty());
      REQUIRE(r.image.pixels == img.pixels);
    }
  }
  CHECK(std::abs(applied / static_cast<double>(n) - 0.5) <= 0.02);
}

TEST_CASE("sampled masks meet the area and aspect constraints") {
  Rng rng(4);
  MaskSampler sampler;
  for (int i = 0; i < 10000; ++i) {
    const Mask m = sample_mask(sampler, 64, 64, rng);
    REQUIRE(m.rect().has_value());
    REQUIRE(rect_ok(*m.rect(), 64, 64, sampler.area, sampler.aspect));
    REQUIRE(m.area_fraction() == static_cast<double>(m.rect()->area()) / (64 * 64));
    REQUIRE(m.is_rectangle());
  }
}

TEST_CASE("fixed-size masks are placed uniformly") {
  Rng rng(5);
  MaskSampler sampler{Range{0.04, 0.04}, Range{1.0, 1.0}};
  std::map<std::pair<int, int>, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Rect r = *sample_mask(sampler, 20, 20, rng).rect();
    REQUIRE(r.height == 4);
    REQUIRE(r.width == 4);
    ++counts[{r.top, r.left}];
  }
  CHECK(counts.size() == 17 * 17);
  const double expected = n / 289.0;
  double chi2 = 0.0;
  for (const auto &[pos, c] : counts)
    chi2 += (c - expected) * (c - expected) / expected;
  // 288 dof, 1% critical value about 347
  CHECK(chi2 < 350.0);
}

TEST_CASE("infeasible mask ranges are rejected") {
  Rng rng(6);
  CHECK_THROWS_AS(sample_mask(MaskSampler{Range{0.9, 0.95}, Range{8.0, 10.0}}, 16, 16, rng), ConfigError);
}

TEST_CASE("augmentations are reproducible from the seed") {
  const auto img = ramp(16, 16);
  Rng a(9), b(9);
  const auto ca = cutout(img, CutoutSpec{1.0}, a);
  const auto cb = cutout(img, CutoutSpec{1.0}, b);
  CHECK(ca.image.pixels == cb.image.pixels);
  CHECK(ca.region == cb.region);
  CHECK(sample_mask(MaskSampler{}, 16, 16, a) == sample_mask(MaskSampler{}, 16, 16, b));
}
