#include <cmath>
#include <filesystem>
#include <map>

#include <doctest.h>
#include <opencv2/imgcodecs.hpp>

#include "helpers.hpp"
#include "rfv/synthdata/dataset.hpp"

using namespace rfv;
using namespace rfv::synth;

namespace {

SyntheticFactorSpec small_spec() { return SyntheticFactorSpec::standard(ImageShape{32, 32, 3}); }

std::filesystem::path fresh_dir(const std::string &name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace

TEST_CASE("render is a pure function of its factors") {
  const auto spec = small_spec();
  Rng rng(1);
  const auto a = sample_class(spec, rng);
  const auto b = sample_content(spec, rng);
  const auto r1 = render(a, b, spec, 3);
  const auto r2 = render(a, b, spec, 3);
  CHECK(r1.pixels == r2.pixels);
  CHECK(oracle_class(r1) == a);
  CHECK(oracle_content(r1) == b);
  CHECK(r1.identity == 3);
}

TEST_CASE("render output stays in the unit range") {
  const auto spec = small_spec();
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto img = render(sample_class(spec, rng), sample_content(spec, rng), spec);
    REQUIRE(img.in_unit_range());
  }
}

TEST_CASE("class and content factors are disentangled") {
  const auto spec = small_spec();
  Rng rng(3);
  const auto a = sample_class(spec, rng);
  auto b = sample_content(spec, rng);
  auto b2 = b;
  b2[kShiftX] = spec.content_ranges[kShiftX].lo;
  const auto a2 = sample_class(spec, rng);
  CHECK(oracle_class(render(a, b, spec)) == oracle_class(render(a, b2, spec)));
  CHECK(oracle_content(render(a, b, spec)) == oracle_content(render(a2, b, spec)));
  CHECK(render(a, b, spec).pixels != render(a, b2, spec).pixels);
}

TEST_CASE("render rejects out-of-range factors and oracle needs latents") {
  const auto spec = small_spec();
  Rng rng(4);
  auto a = sample_class(spec, rng);
  const auto b = sample_content(spec, rng);
  a[kFaceWidth] = spec.class_ranges[kFaceWidth].hi + 1.0;
  CHECK_THROWS_AS(render(a, b, spec), ConfigError);
  LabeledImage plain(spec.image);
  CHECK_THROWS_AS(oracle_class(plain), ConfigError);
}

TEST_CASE("synthetic splits are disjoint and complete") {
  SyntheticDatasetConfig cfg;
  cfg.factors = small_spec();
  cfg.train_identities = 5;
  cfg.validation_identities = 3;
  cfg.test_identities = 2;
  cfg.samples_per_identity = 4;
  const auto ds = Dataset::synthetic(cfg);
  CHECK(ds.split().disjoint());
  CHECK(ds.identity_count() == 10);
  CHECK(ds.size() == 40);
  for (int id = 0; id < 10; ++id) {
    CHECK(ds.samples_of(id).size() == 4);
    for (auto i : ds.samples_of(id))
      CHECK(ds.image(i).identity == id);
  }
  const auto again = Dataset::synthetic(cfg);
  CHECK(again.image(17).pixels == ds.image(17).pixels);
}

TEST_CASE("sample_pair marginals") {
  SyntheticDatasetConfig cfg;
  cfg.factors = small_spec();
  cfg.train_identities = 4;
  cfg.validation_identities = 0;
  cfg.test_identities = 0;
  cfg.samples_per_identity = 2;
  const auto ds = Dataset::synthetic(cfg);
  const std::vector<int> ids{0, 1, 2, 3};
  Rng rng(5);
  const int n = 10000;
  std::map<int, int> as_x;
  std::map<std::size_t, int> per_image;
  for (int i = 0; i < n; ++i) {
    const auto [x, t] = sample_pair(ds, ids, rng);
    REQUIRE(ds.image(x).identity != ds.image(t).identity);
    ++as_x[ds.image(x).identity];
    ++per_image[x];
  }
  for (int id : ids)
    CHECK(std::abs(as_x[id] / static_cast<double>(n) - 0.25) <= 0.02);
  // chi-square over the 8 images, 7 dof, 1% critical value 18.475
  double chi2 = 0.0;
  const double expected = n / 8.0;
  for (const auto &[i, c] : per_image)
    chi2 += (c - expected) * (c - expected) / expected;
  CHECK(per_image.size() == 8);
  CHECK(chi2 < 18.475);
  CHECK_THROWS_AS(sample_pair(ds, std::vector<int>{0}, rng), ConfigError);
}

TEST_CASE("ingest_folder") {
  SUBCASE("empty directory gives an empty dataset") {
    const auto dir = fresh_dir("rfv_ingest_empty");
    const auto ds = ingest_folder(dir);
    CHECK(ds.size() == 0);
    CHECK(ds.split().identity_count() == 0);
  }
  SUBCASE("three identities of four images") {
    const auto dir = fresh_dir("rfv_ingest_three");
    for (const std::string name : {"carol", "alice", "bob"}) {
      std::filesystem::create_directories(dir / name);
      for (int i = 0; i < 4; ++i) {
        cv::Mat img(20, 16, CV_8UC3, cv::Scalar(10 * i, 50, 200));
        cv::imwrite((dir / name / (std::to_string(i) + ".png")).string(), img);
      }
    }
    IngestOptions opts;
    opts.shape = ImageShape{16, 16, 3};
    const auto ds = ingest_folder(dir, opts);
    CHECK(ds.identity_count() == 3);
    CHECK(ds.size() == 12);
    CHECK(ds.identity_names() == std::vector<std::string>{"alice", "bob", "carol"});
    CHECK(ds.split().disjoint());
    CHECK(ds.split().identity_count() == 3);
    for (const auto &img : ds.images()) {
      CHECK(img.shape == opts.shape);
      CHECK(img.in_unit_range());
    }
    const auto again = ingest_folder(dir, opts);
    CHECK(again.identity_names() == ds.identity_names());
    CHECK(again.sources == ds.sources);
    CHECK(manifest(ds, {{"k", 1}}) == manifest(again, {{"k", 1}}));
  }
}
