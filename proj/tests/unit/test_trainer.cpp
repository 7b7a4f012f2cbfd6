#include <chrono>
#include <cmath>
#include <filesystem>

#include <doctest.h>

#include "helpers.hpp"
#include "rfv/adversary/geometry.hpp"
#include "toy_fixture.hpp"

using namespace rfv;
using namespace rfv::train;
using rfv::test::quick_config;
using rfv::test::toy_world;

namespace {

BatchSources sources() {
  const auto &w = toy_world();
  return BatchSources{&w.dataset, w.dataset.split().train_identities, w.generator.get()};
}

bool same_records(const RunLog &a, const RunLog &b) {
  if (a.records.size() != b.records.size())
    return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto &x = a.records[i];
    const auto &y = b.records[i];
    if (x.step != y.step || x.train_loss != y.train_loss || x.val_loss != y.val_loss || x.test_loss != y.test_loss ||
        x.val_auroc != y.val_auroc || x.diverged != y.diverged)
      return false;
  }
  return true;
}

double seconds_per_step(TrainConfig cfg, int steps) {
  const auto &w = toy_world();
  cfg.total_steps = steps;
  cfg.validation_interval = steps;
  cfg.validation_pairs = 8;
  const auto start = std::chrono::steady_clock::now();
  (void)train::train(cfg, w.dataset, w.generator.get());
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / steps;
}

} // namespace

TEST_CASE("mining picks the closest candidate") {
  const auto &w = toy_world();
  const auto &ds = w.dataset;
  Rng rng(1);
  const auto &x = ds.image(0);
  std::vector<LabeledImage> one{ds.image(20)};
  CHECK(mine_negative(w.model, x, one) == 0);
  CHECK_THROWS_AS(mine_negative(w.model, x, std::span<const LabeledImage>{}), ConfigError);

  std::vector<LabeledImage> cands{ds.image(20), ds.image(30), ds.image(45), ds.image(60)};
  std::vector<double> d;
  for (const auto &t : cands)
    d.push_back(feature_distance(embed(w.model, t), embed(w.model, x)));
  const auto best = static_cast<std::size_t>(std::min_element(d.begin(), d.end()) - d.begin());
  CHECK(mine_negative(w.model, x, cands) == best);

  std::vector<LabeledImage> us;
  std::vector<double> du;
  for (const auto &t : cands) {
    us.push_back(gen::transfer(*w.generator, x, t, rng));
    du.push_back(feature_distance(embed(w.model, t), embed(w.model, us.back())));
  }
  const auto best_u = static_cast<std::size_t>(std::min_element(du.begin(), du.end()) - du.begin());
  CHECK(mine_negative(w.model, x, cands, us) == best_u);
  CHECK_THROWS_AS(mine_negative(w.model, w.generator.get(), x, std::vector<LabeledImage>{ds.image(1)},
                                Regime::proposed, rng),
                  ConfigError);
}

TEST_CASE("mined negatives are closer than uniform ones") {
  const auto &w = toy_world();
  const auto &ids = w.dataset.split().train_identities;
  Rng rng(2);
  double mined = 0.0, uniform = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const auto [xi, t1] = synth::sample_pair(w.dataset, ids, rng);
    const auto &x = w.dataset.image(xi);
    std::size_t t2 = 0;
    do
      t2 = synth::sample_pair(w.dataset, ids, rng).second;
    while (w.dataset.image(t2).identity == x.identity);
    std::vector<LabeledImage> cands{w.dataset.image(t1), w.dataset.image(t2)};
    const Embedding ex = embed(w.model, x);
    const auto k = mine_negative(w.model, x, cands);
    mined += feature_distance(embed(w.model, cands[k]), ex);
    uniform += feature_distance(embed(w.model, cands[0]), ex);
  }
  CHECK(mined < uniform);
}

TEST_CASE("proposed batches") {
  const auto &w = toy_world();
  TrainConfig cfg = quick_config(1);
  cfg.adversarial_training = true;
  Rng rng(3);
  std::size_t attacked = 0, units = 0;
  for (int k = 0; k < 100; ++k) {
    const Batch b = assemble_batch(cfg, sources(), w.model, rng);
    REQUIRE(b.size() == cfg.batch_size);
    for (int i = 0; i < b.size(); ++i) {
      const auto ii = static_cast<std::size_t>(i);
      REQUIRE(b.id_x[ii] == b.id_y[ii]);
      REQUIRE(b.id_x[ii] == b.id_u[ii]);
      REQUIRE(b.id_t[ii] != b.id_x[ii]);
    }
    REQUIRE(b.masks_x.size() == b.attacked.size());
    for (std::size_t j = 0; j < b.attacked.size(); ++j) {
      const auto col = static_cast<Eigen::Index>(b.attacked[j]);
      const Mask &m = b.masks_x[j];
      REQUIRE(cfg.cutout.area.contains(m.area_fraction()));
      const LabeledImage like(w.dataset.shape());
      REQUIRE(unchanged_outside(from_column(b.x.col(col), like),
                                from_column(b.x_adv.col(static_cast<Eigen::Index>(j)), like), m));
      REQUIRE(from_column(b.x_adv.col(static_cast<Eigen::Index>(j)), like).in_unit_range());
    }
    attacked += b.attacked.size();
    units += static_cast<std::size_t>(b.size());
  }
  CHECK(std::abs(static_cast<double>(attacked) / units - 0.5) <= 0.05);
}

TEST_CASE("weak AT and DOA batches") {
  const auto &w = toy_world();
  Rng rng(4);
  TrainConfig cfg = quick_config(1);
  cfg.adversarial_training = true;
  cfg.regime = Regime::weak_at;
  for (int k = 0; k < 20; ++k) {
    const Batch b = assemble_batch(cfg, sources(), w.model, rng);
    CHECK(b.u_is_y);
    CHECK(b.attacked.size() == static_cast<std::size_t>(b.size()));
    for (const auto &m : b.masks_x)
      REQUIRE(cfg.weak_masks.area.contains(m.area_fraction()));
    for (const auto &m : b.masks_t)
      REQUIRE(cfg.weak_masks.area.contains(m.area_fraction()));
    for (int i = 0; i < b.size(); ++i)
      REQUIRE(b.id_y[static_cast<std::size_t>(i)] == b.id_x[static_cast<std::size_t>(i)]);
  }
  cfg.regime = Regime::doa;
  cfg.doa_candidates = 4;
  const auto g = adv::MaskGeometry::scaled_for(w.dataset.shape());
  const auto offsets = adv::grid_offsets(w.dataset.shape().height, g.doa_size, g.doa_stride);
  const Batch b = assemble_batch(cfg, sources(), w.model, rng);
  for (const auto &m : b.masks_x) {
    REQUIRE(m.rect().has_value());
    CHECK(m.rect()->height == g.doa_size);
    CHECK(std::find(offsets.begin(), offsets.end(), m.rect()->top) != offsets.end());
  }
}

TEST_CASE("zero-step run") {
  const auto &w = toy_world();
  TrainConfig cfg = quick_config(0);
  const auto out = train::train(cfg, w.dataset, w.generator.get());
  CHECK(out.log.empty());
  const EmbeddingModel fresh(ArchitectureSpec::standard(w.dataset.shape(), cfg.conv_blocks, cfg.embedding_dim),
                             cfg.seed);
  CHECK(out.final_model.parameters().flatten() == fresh.parameters().flatten());
}

TEST_CASE("training is deterministic and audited") {
  const auto &w = toy_world();
  TrainConfig cfg = quick_config(12);
  cfg.adversarial_training = true;
  cfg.validation_interval = 4;
  TrainOptions opts;
  int audited = 0;
  opts.on_step = [&](const StepAudit &a) {
    ++audited;
    CHECK(a.max_abs_grad_y == 0.0);
    CHECK(a.max_abs_grad_u == 0.0);
    CHECK(a.generator_grad_norm == 0.0);
  };
  const auto a = train::train(cfg, w.dataset, w.generator.get(), opts);
  const auto b = train::train(cfg, w.dataset, w.generator.get());
  CHECK(audited == 12);
  CHECK(a.log.records.size() == 3);
  CHECK(same_records(a.log, b.log));
  CHECK(a.final_model.parameters().flatten() == b.final_model.parameters().flatten());
  CHECK(a.final_model.max_row_norm_deviation() <= 1e-6f);
  long prev = 0;
  for (const auto &r : a.log.records) {
    CHECK(r.step > prev);
    prev = r.step;
    CHECK(std::isfinite(r.train_loss));
    CHECK(std::isfinite(r.val_loss));
    CHECK(std::isfinite(r.val_auroc));
  }
}

TEST_CASE("full warm-up equals the no-AT ablation") {
  const auto &w = toy_world();
  TrainConfig warm = quick_config(6);
  warm.adversarial_training = true;
  warm.clean_warmup_steps = 6;
  TrainConfig clean = quick_config(6);
  const auto a = train::train(warm, w.dataset, w.generator.get());
  const auto b = train::train(clean, w.dataset, w.generator.get());
  CHECK(a.final_model.parameters().flatten() == b.final_model.parameters().flatten());
  warm.clean_warmup_steps = 3;
  const auto c = train::train(warm, w.dataset, w.generator.get());
  CHECK(c.final_model.parameters().flatten() != b.final_model.parameters().flatten());
}

TEST_CASE("early stopping selects the best checkpoint") {
  const auto &w = toy_world();
  TrainConfig cfg = quick_config(8);
  cfg.validation_interval = 2;
  const auto out = train::train(cfg, w.dataset, w.generator.get());
  REQUIRE(out.log.records.size() == 4);
  const auto idx = out.log.best_index(EarlyStopMetric::val_auroc);
  for (const auto &r : out.log.records)
    CHECK(r.val_auroc <= out.log.records[idx].val_auroc);
  CHECK(out.best_step == out.log.records[idx].step);
  CHECK(out.model.parameters().flatten() == model_from(out.checkpoints.at(out.best_step)).parameters().flatten());
  const auto by_loss = early_stop_select(out.log, out.checkpoints, EarlyStopMetric::val_loss);
  const auto li = out.log.best_index(EarlyStopMetric::val_loss);
  CHECK(by_loss.parameters().flatten() ==
        model_from(out.checkpoints.at(out.log.records[li].step)).parameters().flatten());

  std::map<long, Checkpoint> single;
  single.emplace(8, out.checkpoints.at(8));
  CHECK(early_stop_select(RunLog{}, single, EarlyStopMetric::val_auroc).parameters().flatten() ==
        model_from(out.checkpoints.at(8)).parameters().flatten());
}

TEST_CASE("run log CSV round trip and run directory") {
  const auto &w = toy_world();
  const auto dir = std::filesystem::temp_directory_path() / "rfv_train_dir";
  std::filesystem::remove_all(dir);
  TrainConfig cfg = quick_config(4);
  cfg.validation_interval = 2;
  TrainOptions opts;
  opts.run_dir = dir;
  opts.include_wall_time = false;
  const auto out = train::train(cfg, w.dataset, w.generator.get(), opts);
  const auto back = read_runlog_csv(dir / "runlog.csv");
  CHECK(back.records.size() == out.log.records.size());
  CHECK(std::filesystem::exists(dir / "best.json"));
  CHECK(load_checkpoint(dir / "best.json").step == out.best_step);
}

TEST_CASE("non-finite loss aborts with a diagnostic checkpoint") {
  const auto &w = toy_world();
  TrainConfig cfg = quick_config(50);
  cfg.optimizer.learning_rate = 1e30;
  const auto dir = std::filesystem::temp_directory_path() / "rfv_abort_dir";
  std::filesystem::remove_all(dir);
  TrainOptions opts;
  opts.run_dir = dir;
  try {
    (void)train::train(cfg, w.dataset, w.generator.get(), opts);
    FAIL("training did not abort");
  } catch (const TrainingAborted &e) {
    REQUIRE(e.diagnostic_checkpoint.has_value());
    CHECK(std::filesystem::exists(*e.diagnostic_checkpoint));
  }
}

TEST_CASE("config validation and strict keys") {
  TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.mining_n = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.clean_warmup_steps = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  nlohmann::json j = TrainConfig{};
  TrainConfig back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);
  j["bogus"] = 1;
  CHECK_THROWS_AS(j.get<TrainConfig>(), ConfigError);
  CHECK(regime_from_string("weak_at") == Regime::weak_at);
  CHECK_THROWS_AS(regime_from_string("strong"), ConfigError);
}

TEST_CASE("DOA costs more per step than the proposed regime") {
  TrainConfig proposed = quick_config(1);
  proposed.adversarial_training = true;
  TrainConfig doa = proposed;
  doa.regime = Regime::doa;
  doa.doa_candidates = 10;
  CHECK(seconds_per_step(doa, 6) > seconds_per_step(proposed, 6));
}
