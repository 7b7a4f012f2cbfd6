#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <doctest.h>

#include "helpers.hpp"
#include "rfv/augment/augment.hpp"
#include "rfv/eval/metrics.hpp"
#include "rfv/eval/plots.hpp"
#include "rfv/eval/verification.hpp"
#include "toy_fixture.hpp"

using namespace rfv;
using namespace rfv::eval;
using rfv::test::toy_world;

namespace {

/// Pair counting: P(s_pos > s_neg) + 0.5 P(s_pos = s_neg).
double auroc_oracle(const std::vector<double> &s, const std::vector<int> &l) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (l[i] == 1 && l[j] == 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

/// Step-wise sum over distinct thresholds, each count recomputed by scanning.
double aupr_oracle(const std::vector<double> &s, const std::vector<int> &l) {
  std::vector<double> th(s.begin(), s.end());
  std::sort(th.begin(), th.end(), std::greater<>());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  const double P = static_cast<double>(std::count(l.begin(), l.end(), 1));
  double prev_recall = 0.0, area = 0.0;
  for (double t : th) {
    double tp = 0.0, flagged = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) {
        flagged += 1.0;
        tp += l[i];
      }
    const double recall = tp / P;
    area += (recall - prev_recall) * (tp / flagged);
    prev_recall = recall;
  }
  return area;
}

LabeledImage symmetric_image(Rng &rng) {
  LabeledImage img = rfv::test::random_image(toy_world().dataset.shape(), rng);
  const auto m = aug::mirror(img);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = 0.5f * (img.pixels[i] + m.pixels[i]);
  return img;
}

SuiteContext context() {
  const auto &w = toy_world();
  SuiteContext ctx;
  ctx.dataset = &w.dataset;
  ctx.generator = w.generator.get();
  ctx.geometry = adv::MaskGeometry::scaled_for(w.dataset.shape());
  ctx.seed = 3;
  return ctx;
}

TrialPlan small_plan() {
  const auto &w = toy_world();
  PlanConfig cfg{2, 3, 4, 5};
  Rng rng(5);
  return make_trial_plan(w.dataset, w.dataset.split().test_identities, cfg, rng);
}

std::string read_file(const std::filesystem::path &p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

} // namespace

TEST_CASE("AU-ROC and AU-PR boundary values") {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> l{0, 0, 1, 1};
  const auto m = auroc_aupr(s, l);
  CHECK(m.au_roc == 1.0);
  CHECK(m.au_pr == 1.0);
  CHECK_THROWS_AS(auroc_aupr(s, std::vector<int>{1, 1, 1, 1}), ConfigError);
  CHECK_THROWS_AS(auroc_aupr(s, std::vector<int>{0, 1}), ConfigError);

  Rng rng(1);
  std::vector<double> rs(20000);
  std::vector<int> rl(20000);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    rs[i] = uniform01(rng);
    rl[i] = uniform01(rng) < 0.5 ? 1 : 0;
  }
  CHECK(std::abs(auroc_aupr(rs, rl).au_roc - 0.5) <= 0.03);
}

TEST_CASE("AU-ROC and AU-PR match the brute-force oracles") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = uniform_int(rng, 2, 12);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> l(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = uniform_int(rng, 0, 4) / 4.0; // coarse values force ties
      l[static_cast<std::size_t>(i)] = uniform_int(rng, 0, 1);
    }
    l[0] = 0;
    l[1] = 1;
    const auto m = auroc_aupr(s, l);
    REQUIRE(std::abs(m.au_roc - auroc_oracle(s, l)) <= 1e-9);
    REQUIRE(std::abs(m.au_pr - aupr_oracle(s, l)) <= 1e-9);
    REQUIRE(m.au_roc >= 0.0);
    REQUIRE(m.au_pr <= 1.0);
  }
}

TEST_CASE("AU-ROC is invariant under increasing transforms") {
  Rng rng(3);
  std::vector<double> s(300), t(300);
  std::vector<int> l(300);
  for (std::size_t i = 0; i < s.size(); ++i) {
    l[i] = uniform01(rng) < 0.4 ? 1 : 0;
    s[i] = uniform01(rng) + 0.3 * l[i];
    t[i] = s[i] * s[i] * s[i] + 1.0;
  }
  CHECK(auroc_aupr(s, l).au_roc == auroc_aupr(t, l).au_roc);
}

TEST_CASE("ROC curve starts at the origin and ends at one") {
  const std::vector<double> s{0.3, 0.1, 0.7, 0.7, 0.5};
  const std::vector<int> l{0, 0, 1, 0, 1};
  const auto roc = roc_curve(s, l);
  CHECK(roc.front().x == 0.0);
  CHECK(roc.front().y == 0.0);
  CHECK(roc.back().x == 1.0);
  CHECK(roc.back().y == 1.0);
  const auto pr = pr_curve(s, l);
  CHECK(pr.back().x == 1.0);
}

TEST_CASE("threshold calibration") {
  const std::vector<double> s{0.4, 0.1, 0.9, 0.3};
  CHECK(calibrate_threshold(s, 1.0) == 0.1);
  const double top = calibrate_threshold(s, 1e-9);
  CHECK(top > 0.9);
  CHECK(top == std::nextafter(0.9, 1e300));
  CHECK_THROWS_AS(calibrate_threshold(std::vector<double>{}, 0.05), ConfigError);
  CHECK_THROWS_AS(calibrate_threshold(s, 0.0), ConfigError);

  Rng rng(4);
  std::vector<double> u(100);
  for (auto &v : u)
    v = uniform01(rng);
  auto sorted = u;
  std::sort(sorted.begin(), sorted.end());
  const double delta = calibrate_threshold(u, 0.05);
  CHECK(delta == sorted[95]);
  CHECK(detection_rate(u, delta) <= 0.05);
  CHECK(detection_rate(u, sorted[94]) > 0.05);
}

TEST_CASE("medoid and score") {
  const auto &w = toy_world();
  const auto &ds = w.dataset;
  Rng rng(5);
  // {v, v, w}: w is an outlier
  const LabeledImage v = ds.image(0);
  LabeledImage far = v;
  std::fill(far.pixels.begin(), far.pixels.end(), 1.0f);
  std::vector<LabeledImage> set{far, v, v};
  CHECK(medoid(w.model, set) == 1);
  std::vector<LabeledImage> perm{v, far, v};
  const auto e1 = enroll(w.model, set, true);
  const auto e2 = enroll(w.model, perm, true);
  CHECK(e1.embedding == e2.embedding);

  Detector d{&w.model, 1.0, {}};
  std::vector<LabeledImage> targets{ds.image(3), ds.image(4)};
  CHECK(score(d, ds.image(3), targets, Tta{}) == 0.0);

  const LabeledImage sym = symmetric_image(rng);
  CHECK(score(d, sym, targets, Tta{true, false}) ==
        doctest::Approx(score(d, sym, targets, Tta{})).epsilon(1e-6));
  const auto name_roundtrip = {Tta::parse("none"), Tta::parse("mirror"), Tta::parse("select"), Tta::parse("both")};
  std::set<std::string> names;
  for (const auto &t : name_roundtrip)
    names.insert(t.name());
  CHECK(names.size() == 4);
  CHECK_THROWS_AS(Tta::parse("flip"), ConfigError);
}

TEST_CASE("mirror TTA averages distances over views") {
  const auto &w = toy_world();
  const auto &ds = w.dataset;
  std::vector<LabeledImage> targets{ds.image(10), ds.image(11)};
  const auto e = enroll(w.model, targets, false, true);
  REQUIRE(e.mirrored.has_value());
  const auto &c = ds.image(30);
  const Embedding ec = embed(w.model, c), em = embed(w.model, aug::mirror(c));
  const double expected = (feature_distance(ec, e.embedding) + feature_distance(em, e.embedding) +
                           feature_distance(ec, *e.mirrored) + feature_distance(em, *e.mirrored)) /
                          4.0;
  CHECK(score_enrolled(w.model, c, e, true) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("trial plans") {
  const auto &ds = toy_world().dataset;
  const auto plan = small_plan();
  REQUIRE(plan.targets.size() == 2);
  for (const auto &t : plan.targets) {
    CHECK(t.target_set == ds.samples_of(t.identity));
    CHECK(t.intruders.size() == 3);
    for (auto i : t.intruders)
      CHECK(ds.image(i).identity != t.identity);
    for (auto i : t.patch_intruders) {
      CHECK(ds.image(i).identity != t.identity);
      CHECK(std::find(t.intruders.begin(), t.intruders.end(), i) == t.intruders.end());
    }
  }
  std::vector<std::size_t> chosen{plan.targets[0].target_set[0], plan.targets[1].target_set[0]};
  const auto trials = clean_trials(plan, chosen);
  for (const auto &tr : trials) {
    const bool same = ds.image(tr.candidate).identity == tr.target_identity;
    CHECK(tr.label == (same ? 0 : 1));
    CHECK(tr.candidate != chosen[0]);
  }
}

TEST_CASE("attack descriptors") {
  CHECK(parse_attack("eyeglasses").type == "eyeglasses");
  CHECK(parse_attack("eyeglasses:evade").mode == adv::AttackMode::evade);
  CHECK(parse_attack("distal", {{"steps", 7}, {"starts", 3}}).distal.steps == 7);
  CHECK_THROWS_AS(parse_attack("eye_patch:evade"), ConfigError);
  CHECK_THROWS_AS(parse_attack("laser"), ConfigError);
  CHECK_THROWS_AS(parse_attack("random_noise", {{"speed", 1}}), ConfigError);
  CHECK(is_known_attack("square_patch"));
  CHECK_FALSE(is_known_attack("square"));
}

TEST_CASE("suite reports") {
  const auto &w = toy_world();
  const auto ctx = context();
  const auto plan = small_plan();
  Detector det{&w.model, 0.0, {}};
  ScoreOptions opts;
  opts.ttas = {Tta{}, Tta{true, true}};

  const auto clean = evaluate_suite(det, ctx, plan, {}, opts);
  CHECK(clean.rows.size() == 2);
  for (const auto &r : clean.rows)
    CHECK(r.attack == "clean");

  std::vector<AttackSpec> specs{parse_attack("eyeglasses", {{"steps", 10}, {"restarts", 1}}),
                                parse_attack("random_noise", {{"patterns", 8}}),
                                parse_attack("eyeglasses:evade", {{"steps", 10}, {"restarts", 1}})};
  std::map<std::string, std::vector<AttackOutcome>> outcomes;
  const auto report = evaluate_suite(det, ctx, plan, specs, opts, &outcomes);
  std::set<std::string> keys;
  for (const auto &r : report.rows) {
    keys.insert(r.attack);
    CHECK(r.au_roc >= 0.0);
    CHECK(r.au_roc <= 1.0);
    CHECK(r.detection_rate.has_value() == (r.attack == "eyeglasses:evade"));
  }
  CHECK(keys == std::set<std::string>{"clean", "eyeglasses", "random_noise", "eyeglasses:evade"});
  CHECK(report.rows.size() == 8);
  CHECK(outcomes.at("eyeglasses").size() >= 6);

  // impersonation outcomes rebuild to images that differ from the start only inside the mask
  for (const auto &o : outcomes.at("eyeglasses")) {
    const auto adv = rebuild(w.dataset, o);
    CHECK(unchanged_outside(w.dataset.image(o.candidate), adv, o.mask));
    CHECK(adv.in_unit_range());
    const auto back = outcome_from_json(to_json(o));
    CHECK(back.values == o.values);
    CHECK(back.mask == o.mask);
  }
  const auto csv = to_csv(report);
  CHECK(csv.rfind("attack,tta,au_roc,au_pr,detection_rate\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);

  // the calibrated genuine pairs themselves are flagged at most at the requested rate
  for (const auto &t : opts.ttas) {
    const auto g = genuine_scores(w.model, w.dataset, plan, t);
    CHECK(detection_rate(g, report.thresholds.at(t.name())) <= opts.fpr + 1.0 / static_cast<double>(g.size()));
  }

  opts.per_target_calibration = true;
  const auto per_target = score_suite(w.model, ctx, plan, outcomes, opts);
  CHECK(per_target.row("eyeglasses:evade", "none").detection_rate.has_value());
}

TEST_CASE("indirect anchor equals the direct attack when F(y) = F(x)") {
  const auto &w = toy_world();
  gen::ToyGenerator exact(*w.dataset.factors, 0.0);
  auto ctx = context();
  ctx.generator = &exact;
  const auto plan = small_plan();
  const auto chosen = enrolled_images(w.model, w.dataset, plan, false);
  const auto direct = run_attack(w.model, ctx, plan, chosen, parse_attack("eyeglasses", {{"steps", 5}, {"restarts", 1}}));
  const auto indirect = run_attack(w.model, ctx, plan, chosen, parse_attack("indirect_anchor", {{"steps", 5}, {"restarts", 1}}));
  REQUIRE(direct.size() == indirect.size());
  for (std::size_t i = 0; i < direct.size(); ++i)
    CHECK(direct[i].final_distance == doctest::Approx(indirect[i].final_distance).epsilon(1e-9));
  const auto best = best_of(w.model, w.dataset, direct, indirect, "best");
  CHECK(best.size() == direct.size());
}

TEST_CASE("attack results do not depend on the job count") {
  const auto &w = toy_world();
  auto ctx = context();
  const auto plan = small_plan();
  const auto chosen = enrolled_images(w.model, w.dataset, plan, false);
  const auto spec = parse_attack("square_patch", {{"steps", 3}, {"probe_steps", 2}, {"restarts", 1}});
  const auto one = run_attack(w.model, ctx, plan, chosen, spec);
  ctx.jobs = 3;
  const auto three = run_attack(w.model, ctx, plan, chosen, spec);
  REQUIRE(one.size() == three.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].values == three[i].values);
    CHECK(one[i].mask == three[i].mask);
  }
}

TEST_CASE("plots") {
  const auto dir = std::filesystem::temp_directory_path() / "rfv_plots";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const adv::MaskGeometry g;
  const ImageShape shape{64, 64, 3};

  SUBCASE("empty histogram still writes files") {
    const auto hist = location_histogram({}, g, shape);
    CHECK(hist.total() == 0);
    emit_plots(hist, dir);
    CHECK(std::filesystem::exists(dir / "locations.csv"));
    CHECK(std::filesystem::exists(dir / "locations.svg"));
    const auto csv = read_file(dir / "locations.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 12 * 12);
  }
  SUBCASE("heatmap counts are conserved") {
    std::vector<AttackOutcome> outs;
    Rng rng(6);
    const auto windows = adv::grid_windows(64, 64, g.square_size, g.square_stride);
    for (int i = 0; i < 37; ++i) {
      AttackOutcome o;
      o.mask = Mask::rectangle(64, 64, windows[static_cast<std::size_t>(uniform_int(rng, 0, 143))]);
      outs.push_back(o);
    }
    const auto hist = location_histogram(outs, g, shape);
    CHECK(hist.total() == 37);
    AttackOutcome off;
    off.mask = Mask::rectangle(64, 64, Rect{1, 1, 10, 10});
    outs.push_back(off);
    CHECK_THROWS_AS(location_histogram(outs, g, shape), ConfigError);
  }
  SUBCASE("run log curves use the logged steps") {
    train::RunLog log;
    for (long s : {50L, 100L, 175L})
      log.records.push_back(train::RunRecord{s, 1.0, 2.0, 3.0, 0.9, false, 0.0});
    const auto series = runlog_series(log);
    REQUIRE(!series.empty());
    for (const auto &s : series)
      CHECK(s.x == std::vector<double>{50.0, 100.0, 175.0});
    emit_plots(log, dir);
    CHECK(std::filesystem::exists(dir / "runlog.svg"));
  }
  SUBCASE("image grid") {
    Rng rng(7);
    std::vector<LabeledImage> imgs{rfv::test::random_image(ImageShape{8, 8, 3}, rng),
                                   rfv::test::random_image(ImageShape{8, 8, 3}, rng)};
    write_image_grid(imgs, 2, dir / "grid.png");
    CHECK(std::filesystem::exists(dir / "grid.png"));
  }
}
