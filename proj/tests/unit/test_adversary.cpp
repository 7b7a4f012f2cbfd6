#include <cmath>
#include <map>

#include <doctest.h>

#include "helpers.hpp"
#include "rfv/adversary/attacks.hpp"
#include "rfv/adversary/geometry.hpp"
#include "rfv/augment/augment.hpp"
#include "toy_fixture.hpp"

using namespace rfv;
using namespace rfv::adv;

namespace {

const LabeledImage &img(std::size_t i) { return rfv::test::toy_world().dataset.image(i); }
const EmbeddingModel &model() { return rfv::test::toy_world().model; }

std::pair<std::size_t, std::size_t> other_identities(Rng &rng) {
  const auto &ds = rfv::test::toy_world().dataset;
  return synth::sample_pair(ds, ds.split().test_identities, rng);
}

AttackConfig tanh_cfg(int steps, int restarts = 1) {
  AttackConfig cfg = AttackConfig::feature_default();
  cfg.steps = steps;
  cfg.restarts = restarts;
  return cfg;
}

Mask glasses() {
  const auto &ds = rfv::test::toy_world().dataset;
  return eyeglasses_mask(*ds.factors, MaskGeometry::scaled_for(ds.shape()));
}

} // namespace

TEST_CASE("default mask geometry matches the stated footprints") {
  const auto spec = synth::SyntheticFactorSpec::standard();
  const MaskGeometry g;
  const Mask e = eyeglasses_mask(spec, g);
  CHECK(std::abs(e.area_fraction() - 0.026) <= 0.005);
  const Mask p = eye_patch_mask(spec, g);
  CHECK(p.count() == 32 * 12);
  CHECK(p.is_rectangle());
  CHECK(std::abs(100.0 / (64 * 64) - 0.025) <= 0.005);
  CHECK(grid_offsets(64, 10, 5).size() == 12);
  CHECK(grid_offsets(64, 20, 5).size() == 10);
  CHECK(grid_offsets(64, 20, 5).back() == 44);
  CHECK(grid_windows(64, 64, 10, 5).size() == 144);
}

TEST_CASE("PGD patch step") {
  Rng rng(1);
  const auto [a, b] = other_identities(rng);
  const Embedding ref = embed(model(), img(b));
  AttackConfig cfg = AttackConfig::training_pgd();
  const Mask m = Mask::rectangle(32, 32, Rect{8, 8, 8, 8});

  cfg.steps = 0;
  CHECK(pgd_patch_step(model(), img(a), m, ref, Direction::descend, cfg).adversarial_image.pixels == img(a).pixels);
  cfg.steps = 10;
  CHECK(pgd_patch_step(model(), img(a), Mask(32, 32), ref, Direction::descend, cfg).adversarial_image.pixels ==
        img(a).pixels);

  cfg.epsilon = 2.0 / 255.0;
  const auto small = pgd_patch_step(model(), img(a), m, ref, Direction::ascend, cfg);
  CHECK(unchanged_outside(img(a), small.adversarial_image, m));
  CHECK(max_abs_difference(img(a), small.adversarial_image) <= 2.0f / 255.0f + 1e-6f);

  cfg.epsilon = 1.0;
  int reduced = 0;
  for (int i = 0; i < 100; ++i) {
    const auto [x, t] = other_identities(rng);
    const Embedding target = embed(model(), img(t));
    const Mask mask = aug::sample_mask(aug::MaskSampler{}, 32, 32, rng);
    const auto r = pgd_patch_step(model(), img(x), mask, target, Direction::descend, cfg);
    REQUIRE(r.adversarial_image.in_unit_range());
    REQUIRE(unchanged_outside(img(x), r.adversarial_image, mask));
    if (r.final_distance < feature_distance(embed(model(), img(x)), target))
      ++reduced;
  }
  CHECK(reduced >= 95);
}

TEST_CASE("feature adversary at the optimum stays put") {
  Rng rng(2);
  const Mask m = glasses();
  const auto r = feature_adversary(model(), img(3), m, embed(model(), img(3)), tanh_cfg(50), rng);
  CHECK(r.final_objective <= 1e-8);
  double norm = 0.0;
  for (float v : r.perturbation)
    norm += static_cast<double>(v) * v;
  CHECK(std::sqrt(norm) <= 1e-4);
}

TEST_CASE("feature adversary traces and box") {
  Rng rng(3);
  const Mask m = glasses();
  for (int trial = 0; trial < 5; ++trial) {
    const auto [x, t] = other_identities(rng);
    const auto r = feature_adversary(model(), img(x), m, embed(model(), img(t)), tanh_cfg(60, 2), rng);
    REQUIRE(r.objective_trace.size() == 61);
    for (double v : r.objective_trace)
      REQUIRE(std::isfinite(v));
    CHECK(r.objective_trace.back() <= r.objective_trace.front());
    CHECK(r.adversarial_image.in_unit_range());
    CHECK(unchanged_outside(img(x), r.adversarial_image, m));
    CHECK(r.final_objective == doctest::Approx(r.final_distance * r.final_distance).epsilon(1e-4));
  }
  // tanh range: 10^4 sampled iterate pixels
  std::uniform_real_distribution<double> w(-50.0, 50.0);
  for (int i = 0; i < 10000; ++i) {
    const float p = from_tanh_space(w(rng));
    REQUIRE(p >= 0.0f);
    REQUIRE(p <= 1.0f);
  }
  CHECK(from_tanh_space(to_tanh_space(0.0)) >= 0.0f);
  CHECK(std::isfinite(to_tanh_space(1.0)));
}

TEST_CASE("evasion increases the distance") {
  Rng rng(4);
  const Mask m = glasses();
  AttackConfig cfg = tanh_cfg(40);
  cfg.mode = AttackMode::evade;
  const Embedding own = embed(model(), img(0));
  const auto r = feature_adversary(model(), img(0), m, own, cfg, rng);
  CHECK(r.final_distance > 0.0);
  CHECK(r.final_objective <= -r.final_distance * r.final_distance * (1 - 1e-4));
}

TEST_CASE("batched feature adversary matches single calls") {
  const Mask m = glasses();
  std::vector<FeatureProblem> problems;
  for (std::size_t i : {0u, 7u, 20u})
    problems.push_back(FeatureProblem{&img(i), m, embed(model(), img(i + 30))});
  Rng a(5), b(5);
  const auto batch = feature_adversary_batch(model(), problems, tanh_cfg(20, 2), a);
  for (std::size_t k = 0; k < problems.size(); ++k) {
    const auto single = feature_adversary(model(), *problems[k].start, m, problems[k].target, tanh_cfg(20, 2), b);
    CHECK(single.final_objective == doctest::Approx(batch[k].final_objective).epsilon(1e-4));
  }
}

TEST_CASE("square patch search probes the whole grid") {
  Rng rng(6);
  const auto g = MaskGeometry::scaled_for(ImageShape{32, 32, 3});
  SquareSearchConfig cfg;
  cfg.probe_steps = 5;
  cfg.attack = tanh_cfg(10);
  std::vector<double> probes;
  const auto r = square_patch_search(model(), img(1), embed(model(), img(40)), g, cfg, rng, &probes);
  const auto rows = grid_offsets(32, g.square_size, g.square_stride);
  const std::size_t expected =
      static_cast<std::size_t>(std::ceil((32.0 - g.square_size) / g.square_stride) + 1);
  CHECK(rows.size() == expected);
  CHECK(probes.size() == expected * expected);
  REQUIRE(r.best_mask.has_value());
  const Rect rect = *r.best_mask->rect();
  CHECK(rect.height == g.square_size);
  CHECK(rect.width == g.square_size);
  CHECK(std::find(rows.begin(), rows.end(), rect.top) != rows.end());
  CHECK(std::find(rows.begin(), rows.end(), rect.left) != rows.end());
  const auto best = std::min_element(probes.begin(), probes.end()) - probes.begin();
  CHECK(grid_windows(32, 32, g.square_size, g.square_stride)[static_cast<std::size_t>(best)] == rect);
  CHECK(unchanged_outside(img(1), r.adversarial_image, *r.best_mask));
}

TEST_CASE("best square locations concentrate") {
  Rng rng(7);
  const auto g = MaskGeometry::scaled_for(ImageShape{32, 32, 3});
  SquareSearchConfig cfg;
  cfg.probe_steps = 5;
  cfg.attack = tanh_cfg(1);
  std::map<std::pair<int, int>, int> counts;
  const int n = 100;
  for (int i = 0; i < n; ++i) {
    const auto [x, t] = other_identities(rng);
    const auto r = square_patch_search(model(), img(x), embed(model(), img(t)), g, cfg, rng);
    ++counts[{r.best_mask->rect()->top, r.best_mask->rect()->left}];
  }
  double entropy = 0.0;
  for (const auto &[pos, c] : counts) {
    const double p = c / static_cast<double>(n);
    entropy -= p * std::log(p);
  }
  CHECK(entropy < std::log(static_cast<double>(grid_windows(32, 32, g.square_size, g.square_stride).size())));
}

TEST_CASE("universal patch") {
  Rng rng(8);
  const auto g = MaskGeometry::scaled_for(ImageShape{32, 32, 3});
  const Mask m = eye_patch_mask(*rfv::test::toy_world().dataset.factors, g);
  const Embedding target = embed(model(), img(2));

  const std::vector<LabeledImage> one{img(50)};
  std::vector<double> w(m.pixel_indices(3).size());
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (auto &v : w)
    v = d(rng);
  CHECK(universal_objective(model(), one, m, target, w, AttackMode::impersonate) ==
        doctest::Approx(tanh_objective(model(), img(50), m, target, w, AttackMode::impersonate)).epsilon(1e-12));

  std::vector<LabeledImage> intruders;
  for (std::size_t i = 40; i < 60; ++i)
    intruders.push_back(img(i));
  const auto r = universal_patch(model(), intruders, m, target, tanh_cfg(40), rng);
  CHECK(r.objective_trace.back() < r.objective_trace.front());
  std::vector<float> first;
  for (const auto &x : intruders) {
    LabeledImage p = x;
    paste_values(p, m, r.perturbation);
    const auto vals = extract_values(p, m);
    if (first.empty())
      first = vals;
    CHECK(vals == first);
    CHECK(unchanged_outside(x, p, m));
  }
  CHECK(r.adversarial_image.pixels == [&] {
    LabeledImage p = intruders.front();
    paste_values(p, m, r.perturbation);
    return p.pixels;
  }());
}

TEST_CASE("window sums match brute force") {
  Rng rng(9);
  const int H = 23, W = 17;
  std::vector<double> map(H * W);
  std::uniform_real_distribution<double> d(0.0, 3.0);
  for (auto &v : map)
    v = d(rng);
  const auto windows = grid_windows(H, W, 6, 4);
  const auto sums = window_sums(map, H, W, windows);
  for (std::size_t k = 0; k < windows.size(); ++k) {
    double brute = 0.0;
    for (int y = windows[k].top; y < windows[k].bottom(); ++y)
      for (int x = windows[k].left; x < windows[k].right(); ++x)
        brute += map[static_cast<std::size_t>(y) * W + x];
    CHECK(std::abs(sums[k] - brute) <= 1e-9);
  }
}

TEST_CASE("DOA search picks among the top-C windows") {
  Rng rng(10);
  const auto g = MaskGeometry::scaled_for(ImageShape{32, 32, 3});
  for (int C : {1, 4, 10}) {
    const auto [x, t] = other_identities(rng);
    const auto r = doa_location_search(model(), img(x), embed(model(), img(t)), Direction::ascend, g.doa_size,
                                       g.doa_stride, C, rng);
    REQUIRE(r.candidates.size() == static_cast<std::size_t>(C));
    CHECK(std::find(r.candidates.begin(), r.candidates.end(), r.chosen) != r.candidates.end());
    double kth = r.window_scores[r.candidates.back()];
    for (std::size_t w = 0; w < r.windows.size(); ++w)
      if (std::find(r.candidates.begin(), r.candidates.end(), w) == r.candidates.end())
        CHECK(r.window_scores[w] <= kth);
    CHECK(r.mask == Mask::rectangle(32, 32, r.windows[r.chosen]));
  }
  const auto clamped = doa_location_search(model(), img(0), embed(model(), img(30)), Direction::ascend, g.doa_size,
                                           g.doa_stride, 100000, rng);
  CHECK(clamped.candidates.size() == clamped.windows.size());
}

TEST_CASE("random noise attack") {
  Rng rng(11);
  const Mask m = glasses();
  const Embedding target = embed(model(), img(33));
  Rng copy = rng;
  const auto one = random_noise_attack(model(), img(4), m, target, 1, rng);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> pattern(m.pixel_indices(3).size());
  for (auto &v : pattern)
    v = u(copy);
  CHECK(extract_values(one.adversarial_image, m) == pattern);

  std::vector<double> all;
  const auto r = random_noise_attack(model(), img(4), m, target, 200, rng, &all);
  REQUIRE(all.size() == 200);
  for (double d : all)
    CHECK(r.final_distance <= d * (1 + 1e-5));
  CHECK(unchanged_outside(img(4), r.adversarial_image, m));
}

TEST_CASE("gradient attacks dominate random search") {
  Rng rng(12);
  const Mask m = glasses();
  int dominated = 0;
  const int trials = 50;
  for (int i = 0; i < trials; ++i) {
    const auto [x, t] = other_identities(rng);
    const Embedding target = embed(model(), img(t));
    const auto noise = random_noise_attack(model(), img(x), m, target, 100, rng);
    const auto grad = feature_adversary(model(), img(x), m, target, tanh_cfg(100), rng);
    if (noise.final_distance >= grad.final_distance)
      ++dominated;
  }
  CHECK(dominated >= 48);
}

TEST_CASE("global uniform noise") {
  Rng rng(13);
  LabeledImage grey(ImageShape{64, 64, 3});
  std::fill(grey.pixels.begin(), grey.pixels.end(), 0.5f);
  CHECK(global_uniform_noise(grey, 0.0, rng).pixels == grey.pixels);
  const double a = 10.0 / 255.0;
  const auto out = global_uniform_noise(grey, a, rng);
  double mean = 0.0;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double d = std::abs(out.pixels[i] - grey.pixels[i]);
    REQUIRE(d <= a + 1e-7);
    mean += d;
  }
  mean /= static_cast<double>(out.pixels.size());
  CHECK(std::abs(mean - a / 2) <= 0.05 * a / 2);
  LabeledImage white = grey;
  std::fill(white.pixels.begin(), white.pixels.end(), 1.0f);
  CHECK(global_uniform_noise(white, a, rng).in_unit_range());
}

TEST_CASE("attack records") {
  Rng rng(14);
  const auto r = random_noise_attack(model(), img(4), glasses(), embed(model(), img(33)), 3, rng);
  const auto rec = attack_record("random_noise", r, 14, 3, r.final_distance + 1.0);
  for (const char *key : {"attack_type", "mask_descriptor", "seed", "steps", "final_distance", "success_at_threshold",
                          "trace_summary"})
    CHECK(rec.contains(key));
  CHECK(rec["success_at_threshold"] == true);
}
