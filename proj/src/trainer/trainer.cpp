#include "rfv/trainer/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rfv/core/json_util.hpp"
#include "rfv/eval/metrics.hpp"

namespace rfv::train {

std::string to_string(Regime regime) {
  switch (regime) {
  case Regime::proposed:
    return "proposed";
  case Regime::weak_at:
    return "weak_at";
  case Regime::doa:
    return "doa";
  }
  return "?";
}

Regime regime_from_string(const std::string &name) {
  if (name == "proposed")
    return Regime::proposed;
  if (name == "weak_at")
    return Regime::weak_at;
  if (name == "doa")
    return Regime::doa;
  throw ConfigError("unknown regime '" + name + "' (expected proposed, weak_at or doa)");
}

std::string to_string(EarlyStopMetric metric) { return metric == EarlyStopMetric::val_loss ? "val_loss" : "val_auroc"; }

void TrainConfig::validate() const {
  if (total_steps < 0)
    throw ConfigError("total_steps must be >= 0");
  if (batch_size < 1)
    throw ConfigError("batch_size must be >= 1");
  if (mining_n < 1)
    throw ConfigError("mining_n must be >= 1");
  if (doa_candidates < 1)
    throw ConfigError("doa_candidates must be >= 1");
  if (validation_interval < 1)
    throw ConfigError("validation_interval must be >= 1");
  if (validation_pairs < 2)
    throw ConfigError("validation_pairs must be >= 2");
  if (!(mirror_probability >= 0.0 && mirror_probability <= 1.0))
    throw ConfigError("mirror_probability must lie in [0,1]");
  if (!(cutout.probability >= 0.0 && cutout.probability <= 1.0))
    throw ConfigError("cutout probability must lie in [0,1]");
  if (max_shift < 0)
    throw ConfigError("max_shift must be >= 0");
  if (embedding_dim < 1 || conv_blocks < 1)
    throw ConfigError("embedding_dim and conv_blocks must be >= 1");
  if (clean_warmup_steps < 0)
    throw ConfigError("clean_warmup_steps must be >= 0");
  if (!(divergence_ratio > 0.0))
    throw ConfigError("divergence_ratio must be positive");
  if (attack.parameterization != adv::Parameterization::pgd_clip)
    throw ConfigError("the training attack uses the pgd_clip parameterization");
  optimizer.validate();
  attack.validate();
  loss.validate();
}

namespace {

nlohmann::json range_json(const synth::Range &r) { return nlohmann::json::array({r.lo, r.hi}); }
synth::Range range_from(const nlohmann::json &j) {
  if (!j.is_array() || j.size() != 2)
    throw ConfigError("ranges are [lo, hi] arrays");
  return {j[0].get<double>(), j[1].get<double>()};
}

} // namespace

void to_json(nlohmann::json &j, const TrainConfig &cfg) {
  j = nlohmann::json{
      {"regime", to_string(cfg.regime)},
      {"batch_size", cfg.batch_size},
      {"total_steps", cfg.total_steps},
      {"optimizer",
       {{"learning_rate", cfg.optimizer.learning_rate},
        {"beta1", cfg.optimizer.beta1},
        {"beta2", cfg.optimizer.beta2},
        {"epsilon", cfg.optimizer.epsilon}}},
      {"attack", cfg.attack},
      {"adversarial_training", cfg.adversarial_training},
      {"clean_warmup_steps", cfg.clean_warmup_steps},
      {"mining_n", cfg.mining_n},
      {"doa_candidates", cfg.doa_candidates},
      {"validation_interval", cfg.validation_interval},
      {"early_stop_metric", to_string(cfg.early_stop_metric)},
      {"loss",
       {{"margin", cfg.loss.margin},
        {"stop_gradient_on_generated", cfg.loss.stop_gradient_on_generated},
        {"stop_gradient_features", cfg.loss.stop_gradient_features}}},
      {"mirror_probability", cfg.mirror_probability},
      {"max_shift", cfg.max_shift},
      {"cutout",
       {{"probability", cfg.cutout.probability},
        {"area", range_json(cfg.cutout.area)},
        {"aspect", range_json(cfg.cutout.aspect)}}},
      {"weak_masks", {{"area", range_json(cfg.weak_masks.area)}, {"aspect", range_json(cfg.weak_masks.aspect)}}},
      {"independent_adversarial_mask", cfg.independent_adversarial_mask},
      {"embedding_dim", cfg.embedding_dim},
      {"conv_blocks", cfg.conv_blocks},
      {"seed", cfg.seed},
      {"validation_pairs", cfg.validation_pairs},
      {"divergence_ratio", cfg.divergence_ratio},
      {"stop_on_divergence", cfg.stop_on_divergence}};
}

void from_json(const nlohmann::json &j, TrainConfig &cfg) {
  reject_unknown_keys(j,
                      {"regime", "batch_size", "total_steps", "optimizer", "attack", "adversarial_training",
                       "clean_warmup_steps", "mining_n", "doa_candidates", "validation_interval", "early_stop_metric", "loss", "mirror_probability",
                       "max_shift", "cutout", "weak_masks", "independent_adversarial_mask", "embedding_dim",
                       "conv_blocks", "seed", "validation_pairs", "divergence_ratio", "stop_on_divergence"},
                      "train");
  if (j.contains("regime"))
    cfg.regime = regime_from_string(j.at("regime").get<std::string>());
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.total_steps = j.value("total_steps", cfg.total_steps);
  if (j.contains("optimizer")) {
    const auto &o = j.at("optimizer");
    reject_unknown_keys(o, {"learning_rate", "beta1", "beta2", "epsilon"}, "train.optimizer");
    cfg.optimizer.learning_rate = o.value("learning_rate", cfg.optimizer.learning_rate);
    cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
    cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
    cfg.optimizer.epsilon = o.value("epsilon", cfg.optimizer.epsilon);
  }
  if (j.contains("attack")) {
    // start from the training defaults so partial sections keep them
    nlohmann::json merged = cfg.attack;
    merged.update(j.at("attack"));
    cfg.attack = merged.get<adv::AttackConfig>();
  }
  cfg.adversarial_training = j.value("adversarial_training", cfg.adversarial_training);
  cfg.clean_warmup_steps = j.value("clean_warmup_steps", cfg.clean_warmup_steps);
  cfg.mining_n = j.value("mining_n", cfg.mining_n);
  cfg.doa_candidates = j.value("doa_candidates", cfg.doa_candidates);
  cfg.validation_interval = j.value("validation_interval", cfg.validation_interval);
  if (j.contains("early_stop_metric")) {
    const auto m = j.at("early_stop_metric").get<std::string>();
    if (m == "val_loss")
      cfg.early_stop_metric = EarlyStopMetric::val_loss;
    else if (m == "val_auroc")
      cfg.early_stop_metric = EarlyStopMetric::val_auroc;
    else
      throw ConfigError("early_stop_metric must be val_loss or val_auroc");
  }
  if (j.contains("loss")) {
    const auto &l = j.at("loss");
    reject_unknown_keys(l, {"margin", "stop_gradient_on_generated", "stop_gradient_features"}, "train.loss");
    cfg.loss.margin = l.value("margin", cfg.loss.margin);
    cfg.loss.stop_gradient_on_generated = l.value("stop_gradient_on_generated", cfg.loss.stop_gradient_on_generated);
    cfg.loss.stop_gradient_features = l.value("stop_gradient_features", cfg.loss.stop_gradient_features);
  }
  cfg.mirror_probability = j.value("mirror_probability", cfg.mirror_probability);
  cfg.max_shift = j.value("max_shift", cfg.max_shift);
  if (j.contains("cutout")) {
    const auto &c = j.at("cutout");
    reject_unknown_keys(c, {"probability", "area", "aspect"}, "train.cutout");
    cfg.cutout.probability = c.value("probability", cfg.cutout.probability);
    if (c.contains("area"))
      cfg.cutout.area = range_from(c.at("area"));
    if (c.contains("aspect"))
      cfg.cutout.aspect = range_from(c.at("aspect"));
  }
  if (j.contains("weak_masks")) {
    const auto &c = j.at("weak_masks");
    reject_unknown_keys(c, {"area", "aspect"}, "train.weak_masks");
    if (c.contains("area"))
      cfg.weak_masks.area = range_from(c.at("area"));
    if (c.contains("aspect"))
      cfg.weak_masks.aspect = range_from(c.at("aspect"));
  }
  cfg.independent_adversarial_mask = j.value("independent_adversarial_mask", cfg.independent_adversarial_mask);
  cfg.embedding_dim = j.value("embedding_dim", cfg.embedding_dim);
  cfg.conv_blocks = j.value("conv_blocks", cfg.conv_blocks);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validation_pairs = j.value("validation_pairs", cfg.validation_pairs);
  cfg.divergence_ratio = j.value("divergence_ratio", cfg.divergence_ratio);
  cfg.stop_on_divergence = j.value("stop_on_divergence", cfg.stop_on_divergence);
  cfg.validate();
}

std::size_t RunLog::best_index(EarlyStopMetric metric) const {
  if (records.empty())
    throw ConfigError("run log is empty");
  std::size_t best = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const bool better = metric == EarlyStopMetric::val_auroc ? records[i].val_auroc > records[best].val_auroc
                                                             : records[i].val_loss < records[best].val_loss;
    if (better)
      best = i;
  }
  return best;
}

void write_runlog_csv(const RunLog &log, const std::filesystem::path &path, bool include_wall_time) {
  std::ofstream out(path);
  if (!out)
    throw ConfigError("cannot write " + path.string());
  out << "step,train_loss,val_loss,test_loss,val_auroc,diverged";
  if (include_wall_time)
    out << ",wall_seconds";
  out << "\n";
  char buf[256];
  for (const auto &r : log.records) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%d", r.step, r.train_loss, r.val_loss, r.test_loss,
                  r.val_auroc, r.diverged ? 1 : 0);
    out << buf;
    if (include_wall_time) {
      std::snprintf(buf, sizeof buf, ",%.3f", r.wall_seconds);
      out << buf;
    }
    out << "\n";
  }
}

RunLog read_runlog_csv(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  const bool timed = line.find("wall_seconds") != std::string::npos;
  RunLog log;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ','))
      cells.push_back(cell);
    if (cells.size() < 6)
      throw ConfigError("malformed run log line: " + line);
    RunRecord r;
    r.step = std::stol(cells[0]);
    r.train_loss = std::stod(cells[1]);
    r.val_loss = std::stod(cells[2]);
    r.test_loss = std::stod(cells[3]);
    r.val_auroc = std::stod(cells[4]);
    r.diverged = cells[5] == "1";
    if (timed && cells.size() > 6)
      r.wall_seconds = std::stod(cells[6]);
    log.records.push_back(r);
  }
  return log;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t argmin_pairwise(const EmbeddingModel &model, const MatrixF &a, const MatrixF &b) {
  const MatrixF ea = model.forward(a);
  const MatrixF eb = model.forward(b);
  const VectorD d = (ea.cast<double>() - eb.cast<double>()).colwise().squaredNorm().transpose();
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < d.size(); ++i)
    if (d[i] < d[static_cast<Eigen::Index>(best)])
      best = static_cast<std::size_t>(i);
  return best;
}

} // namespace

std::size_t mine_negative(const EmbeddingModel &model, const LabeledImage &x, std::span<const LabeledImage> candidates,
                          std::span<const LabeledImage> transferred) {
  if (candidates.empty())
    throw ConfigError("mining needs at least one candidate");
  if (!transferred.empty() && transferred.size() != candidates.size())
    throw ConfigError("one transferred image per candidate is required");
  if (candidates.size() == 1)
    return 0;
  const MatrixF t = to_columns(candidates);
  const MatrixF ref =
      transferred.empty() ? MatrixF(to_column(x).replicate(1, t.cols())) : to_columns(transferred);
  return argmin_pairwise(model, t, ref);
}

std::size_t mine_negative(const EmbeddingModel &model, const gen::DisentangledGenerator *gen, const LabeledImage &x,
                          std::span<const LabeledImage> candidates, Regime regime, Rng &rng) {
  if (candidates.empty())
    throw ConfigError("mining needs at least one candidate");
  for (const auto &t : candidates)
    if (t.identity == x.identity)
      throw ConfigError("mining candidates must have an identity different from the target");
  if (regime != Regime::proposed)
    return mine_negative(model, x, candidates);
  if (!gen)
    throw ConfigError("the proposed regime mines with the generator");
  std::vector<LabeledImage> u;
  u.reserve(candidates.size());
  for (const auto &t : candidates)
    u.push_back(gen::transfer(*gen, x, t, rng));
  return mine_negative(model, x, candidates, u);
}

namespace {

LabeledImage static_augment(const LabeledImage &image, const TrainConfig &cfg, Rng &rng) {
  LabeledImage out = uniform01(rng) < cfg.mirror_probability ? aug::mirror(image) : image;
  if (cfg.max_shift > 0)
    out = aug::random_shift(out, rng, cfg.max_shift);
  return out;
}

std::vector<int> eligible_identities(const synth::Dataset &ds, const std::vector<int> &ids, bool need_pair) {
  std::vector<int> out;
  for (int id : ids)
    if (ds.samples_of(id).size() >= (need_pair ? 2u : 1u))
      out.push_back(id);
  if (out.size() < 2)
    throw ConfigError("training needs at least two usable identities");
  return out;
}

int other_identity(const std::vector<int> &ids, int not_this, Rng &rng) {
  for (;;) {
    const int c = ids[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(ids.size()) - 1))];
    if (c != not_this)
      return c;
  }
}

const LabeledImage &random_sample(const synth::Dataset &ds, int id, Rng &rng, std::size_t *index = nullptr) {
  const auto &s = ds.samples_of(id);
  const std::size_t i = s[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(s.size()) - 1))];
  if (index)
    *index = i;
  return ds.image(i);
}

} // namespace

Batch assemble_batch(const TrainConfig &cfg, const BatchSources &src, const EmbeddingModel &model, Rng &rng) {
  if (!src.dataset)
    throw ConfigError("batch assembly needs a dataset");
  const synth::Dataset &ds = *src.dataset;
  const bool proposed = cfg.regime == Regime::proposed;
  if (proposed && !src.generator)
    throw ConfigError("the proposed regime needs a generator");
  const auto ids = eligible_identities(ds, src.identities, !proposed);
  const ImageShape shape = ds.shape();
  const int B = cfg.batch_size;
  const int nm = cfg.mining_n;

  Batch batch;
  batch.regime = cfg.regime;
  batch.u_is_y = !proposed;

  std::vector<LabeledImage> xs, ys, cand, cand_ref;
  std::vector<bool> cut(static_cast<std::size_t>(B), false);
  std::vector<LabeledImage> x_cut;                // proposed: cutout version of x per unit
  std::vector<LabeledImage> cand_cut;             // proposed: cutout version per candidate
  std::vector<Mask> cut_x, cand_mask;
  xs.reserve(B);
  ys.reserve(B);
  cand.reserve(static_cast<std::size_t>(B) * nm);

  for (int b = 0; b < B; ++b) {
    const int cx = ids[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(ids.size()) - 1))];
    std::size_t xi = 0;
    const LabeledImage &x_raw = random_sample(ds, cx, rng, &xi);
    std::vector<const LabeledImage *> t_raw;
    for (int k = 0; k < nm; ++k)
      t_raw.push_back(&random_sample(ds, other_identity(ids, cx, rng), rng));

    if (proposed) {
      ys.push_back(gen::autoencode(*src.generator, x_raw, rng));
      for (const auto *t : t_raw)
        cand_ref.push_back(gen::transfer(*src.generator, x_raw, *t, rng));
    } else {
      ys.push_back(static_augment(ds.image(synth::sample_within(ds, cx, rng, xi)), cfg, rng));
    }
    xs.push_back(static_augment(x_raw, cfg, rng));
    for (const auto *t : t_raw)
      cand.push_back(static_augment(*t, cfg, rng));

    if (proposed) {
      const bool applied = uniform01(rng) < cfg.cutout.probability;
      cut[static_cast<std::size_t>(b)] = applied;
      aug::CutoutSpec always = cfg.cutout;
      always.probability = 1.0;
      if (applied) {
        auto cx_res = aug::cutout(xs.back(), always, rng);
        x_cut.push_back(std::move(cx_res.image));
        cut_x.push_back(std::move(cx_res.region));
        for (int k = 0; k < nm; ++k) {
          auto ct = aug::cutout(cand[cand.size() - static_cast<std::size_t>(nm) + static_cast<std::size_t>(k)], always, rng);
          cand_cut.push_back(std::move(ct.image));
          cand_mask.push_back(std::move(ct.region));
        }
      } else {
        x_cut.push_back(xs.back());
        cut_x.emplace_back(shape.height, shape.width);
        for (int k = 0; k < nm; ++k) {
          cand_cut.push_back(cand[cand.size() - static_cast<std::size_t>(nm) + static_cast<std::size_t>(k)]);
          cand_mask.emplace_back(shape.height, shape.width);
        }
      }
    }
  }

  // Mining, after static augmentation (cutout included) and before any attack.
  std::vector<std::size_t> chosen(static_cast<std::size_t>(B), 0);
  if (nm > 1) {
    const auto &probe = proposed ? cand_cut : cand;
    const MatrixF t_all = to_columns(std::span<const LabeledImage>(probe));
    MatrixF ref_all(t_all.rows(), t_all.cols());
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < nm; ++k) {
        const auto col = static_cast<Eigen::Index>(b * nm + k);
        ref_all.col(col) = proposed ? to_column(cand_ref[static_cast<std::size_t>(col)])
                                    : to_column(xs[static_cast<std::size_t>(b)]);
      }
    const MatrixF et = model.forward(t_all);
    const MatrixF er = model.forward(ref_all);
    const VectorD d = (et.cast<double>() - er.cast<double>()).colwise().squaredNorm().transpose();
    for (int b = 0; b < B; ++b) {
      std::size_t best = 0;
      for (int k = 1; k < nm; ++k)
        if (d[b * nm + k] < d[b * nm + static_cast<Eigen::Index>(best)])
          best = static_cast<std::size_t>(k);
      chosen[static_cast<std::size_t>(b)] = best;
    }
  }

  const auto pick = [&](int b) { return static_cast<std::size_t>(b) * nm + chosen[static_cast<std::size_t>(b)]; };
  const auto rows = static_cast<Eigen::Index>(shape.size());
  batch.x.resize(rows, B);
  batch.y.resize(rows, B);
  batch.t.resize(rows, B);
  batch.u.resize(rows, B);
  for (int b = 0; b < B; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    const LabeledImage &t = cand[pick(b)];
    const LabeledImage &u = proposed ? cand_ref[pick(b)] : ys[bi];
    batch.x.col(b) = to_column(xs[bi]);
    batch.y.col(b) = to_column(ys[bi]);
    batch.t.col(b) = to_column(t);
    batch.u.col(b) = to_column(u);
    batch.id_x.push_back(xs[bi].identity);
    batch.id_y.push_back(ys[bi].identity);
    batch.id_t.push_back(t.identity);
    batch.id_u.push_back(u.identity);
  }

  // Augmented copies and their masks.
  std::vector<LabeledImage> xa, ta;
  if (proposed) {
    for (int b = 0; b < B; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      if (!cut[bi])
        continue;
      batch.attacked.push_back(bi);
      LabeledImage x = x_cut[bi];
      LabeledImage t = cand_cut[pick(b)];
      Mask mx = cut_x[bi];
      Mask mt = cand_mask[pick(b)];
      if (cfg.independent_adversarial_mask) {
        const aug::MaskSampler sampler{cfg.cutout.area, cfg.cutout.aspect};
        mx = aug::sample_mask(sampler, shape.height, shape.width, rng);
        mt = aug::sample_mask(sampler, shape.height, shape.width, rng);
        aug::fill_uniform(x, mx, rng);
        aug::fill_uniform(t, mt, rng);
      }
      xa.push_back(std::move(x));
      ta.push_back(std::move(t));
      batch.masks_x.push_back(std::move(mx));
      batch.masks_t.push_back(std::move(mt));
    }
  } else {
    const adv::MaskGeometry geometry = adv::MaskGeometry::scaled_for(shape);
    Embedding ey;
    for (int b = 0; b < B; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      batch.attacked.push_back(bi);
      LabeledImage x = xs[bi];
      LabeledImage t = cand[pick(b)];
      Mask mx, mt;
      if (cfg.regime == Regime::weak_at) {
        mx = aug::sample_mask(cfg.weak_masks, shape.height, shape.width, rng);
        mt = aug::sample_mask(cfg.weak_masks, shape.height, shape.width, rng);
      } else {
        ey = model.forward(MatrixF(batch.y.col(b)));
        mx = adv::doa_location_search(model, x, ey, adv::Direction::ascend, geometry.doa_size, geometry.doa_stride,
                                      cfg.doa_candidates, rng)
                 .mask;
        mt = adv::doa_location_search(model, t, ey, adv::Direction::descend, geometry.doa_size, geometry.doa_stride,
                                      cfg.doa_candidates, rng)
                 .mask;
      }
      // random start inside the patch
      aug::fill_uniform(x, mx, rng);
      aug::fill_uniform(t, mt, rng);
      xa.push_back(std::move(x));
      ta.push_back(std::move(t));
      batch.masks_x.push_back(std::move(mx));
      batch.masks_t.push_back(std::move(mt));
    }
  }

  if (!batch.attacked.empty()) {
    batch.x_adv = to_columns(std::span<const LabeledImage>(xa));
    batch.t_adv = to_columns(std::span<const LabeledImage>(ta));
    if (cfg.adversarial_training && cfg.attack.steps > 0) {
      const auto n = static_cast<Eigen::Index>(batch.attacked.size());
      MatrixF ry(rows, n), ru(rows, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        ry.col(i) = batch.y.col(static_cast<Eigen::Index>(batch.attacked[static_cast<std::size_t>(i)]));
        ru.col(i) = batch.u.col(static_cast<Eigen::Index>(batch.attacked[static_cast<std::size_t>(i)]));
      }
      const MatrixF ref_x = model.forward(ry);
      const MatrixF ref_t = model.forward(ru);
      batch.x_adv = adv::pgd_patch_batch(model, batch.x_adv, batch.masks_x, ref_x, adv::Direction::ascend, cfg.attack);
      batch.t_adv = adv::pgd_patch_batch(model, batch.t_adv, batch.masks_t, ref_t, adv::Direction::descend, cfg.attack);
    }
  } else {
    batch.x_adv.resize(rows, 0);
    batch.t_adv.resize(rows, 0);
  }
  return batch;
}

// ---------------------------------------------------------------------------

PairSet make_pair_set(const synth::Dataset &dataset, const std::vector<int> &identities, int pairs, Rng &rng) {
  const auto ids = eligible_identities(dataset, identities, true);
  const auto rows = static_cast<Eigen::Index>(dataset.shape().size());
  PairSet p;
  p.x.resize(rows, pairs);
  p.y.resize(rows, pairs);
  p.t.resize(rows, pairs);
  for (int i = 0; i < pairs; ++i) {
    const int c = ids[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(ids.size()) - 1))];
    std::size_t xi = 0;
    p.x.col(i) = to_column(random_sample(dataset, c, rng, &xi));
    p.y.col(i) = to_column(dataset.image(synth::sample_within(dataset, c, rng, xi)));
    p.t.col(i) = to_column(random_sample(dataset, other_identity(ids, c, rng), rng));
  }
  return p;
}

PairMetrics evaluate_pairs(const EmbeddingModel &model, const PairSet &pairs, const loss::LossConfig &cfg) {
  const MatrixF ex = model.forward(pairs.x);
  const MatrixF ey = model.forward(pairs.y);
  const MatrixF et = model.forward(pairs.t);
  const VectorD pos = (ex.cast<double>() - ey.cast<double>()).colwise().squaredNorm().transpose();
  const VectorD neg = (et.cast<double>() - ey.cast<double>()).colwise().squaredNorm().transpose();
  PairMetrics m;
  m.loss = (pos.array() + (cfg.margin - neg.array()).max(0.0)).mean();
  std::vector<double> scores;
  std::vector<int> labels;
  for (Eigen::Index i = 0; i < pos.size(); ++i) {
    scores.push_back(std::sqrt(pos[i]));
    labels.push_back(0);
    scores.push_back(std::sqrt(neg[i]));
    labels.push_back(1);
  }
  m.auroc = eval::auroc_aupr(scores, labels).au_roc;
  return m;
}

// ---------------------------------------------------------------------------

namespace {

struct StepLoss {
  double loss = 0.0;
  NetParameters<float> grad;
  double max_grad_y = 0.0;
  double max_grad_u = 0.0;
};

double max_abs(const MatrixF &m) { return m.size() ? static_cast<double>(m.cwiseAbs().maxCoeff()) : 0.0; }

void route_to_generator(gen::DisentangledGenerator *g, const MatrixF &grad) {
  if (!g)
    return;
  for (Eigen::Index i = 0; i < grad.cols(); ++i)
    g->accumulate_gradient(grad.col(i));
}

StepLoss batch_loss(const EmbeddingModel &model, const Batch &batch, const TrainConfig &cfg,
                    gen::DisentangledGenerator *generator) {
  const auto B = static_cast<double>(batch.size());
  StepLoss out;
  out.grad = model.parameters().zeros_like();
  const loss::GradRequest req{true, true};
  const auto n_att = static_cast<Eigen::Index>(batch.attacked.size());

  auto gather = [&](const MatrixF &m) {
    MatrixF out_m(m.rows(), n_att);
    for (Eigen::Index i = 0; i < n_att; ++i)
      out_m.col(i) = m.col(static_cast<Eigen::Index>(batch.attacked[static_cast<std::size_t>(i)]));
    return out_m;
  };

  if (batch.regime == Regime::proposed) {
    const auto clean = loss::two_pair_loss(model, batch.x, batch.y, batch.t, batch.u, cfg.loss, req);
    out.loss += clean.per_unit.sum() / B;
    out.grad.add_scaled(clean.param_grad, static_cast<float>(batch.size() / B));
    out.max_grad_y = std::max(out.max_grad_y, max_abs(clean.grad_y));
    out.max_grad_u = std::max(out.max_grad_u, max_abs(clean.grad_u));
    route_to_generator(generator, clean.grad_y);
    route_to_generator(generator, clean.grad_u);
    if (n_att > 0) {
      const auto augd = loss::two_pair_loss(model, batch.x_adv, gather(batch.y), batch.t_adv, gather(batch.u),
                                            cfg.loss, req);
      out.loss += augd.per_unit.sum() / B;
      out.grad.add_scaled(augd.param_grad, static_cast<float>(static_cast<double>(n_att) / B));
      out.max_grad_y = std::max(out.max_grad_y, max_abs(augd.grad_y));
      out.max_grad_u = std::max(out.max_grad_u, max_abs(augd.grad_u));
      route_to_generator(generator, augd.grad_y);
      route_to_generator(generator, augd.grad_u);
    }
  } else {
    // Real triples: y is a real image and receives gradient through both pairs.
    loss::LossConfig lc = cfg.loss;
    lc.stop_gradient_on_generated = false;
    lc.stop_gradient_features = false;
    const auto r = loss::weak_at_loss(model, batch.x_adv, gather(batch.y), batch.t_adv, lc, req);
    out.loss = r.loss;
    out.grad = r.param_grad;
    out.max_grad_y = max_abs(r.grad_y);
  }
  return out;
}

std::filesystem::path checkpoint_name(long step) {
  char name[64];
  std::snprintf(name, sizeof name, "step_%08ld.json", step);
  return std::filesystem::path("checkpoints") / name;
}

} // namespace

TrainOutcome train(const TrainConfig &cfg, const synth::Dataset &dataset, gen::DisentangledGenerator *generator,
                   const TrainOptions &options) {
  cfg.validate();
  if (cfg.regime == Regime::proposed && !generator)
    throw ConfigError("the proposed regime needs a generator");
  const auto &split = dataset.split();
  const auto arch = ArchitectureSpec::standard(dataset.shape(), cfg.conv_blocks, cfg.embedding_dim);
  EmbeddingModel model(arch, cfg.seed);
  if (options.initial) {
    if (!(options.initial->architecture == arch))
      throw ConfigError("initial checkpoint architecture does not match the configuration");
    model = model_from(*options.initial);
  }
  TrainOutcome out{model, model, {}, {}, 0, false};
  if (generator)
    generator->reset_gradient();
  if (options.run_dir)
    std::filesystem::create_directories(*options.run_dir / "checkpoints");
  if (cfg.total_steps == 0) {
    if (options.run_dir)
      write_runlog_csv(out.log, *options.run_dir / "runlog.csv", options.include_wall_time);
    return out;
  }

  Rng batch_rng = make_stream(cfg.seed, 1);
  Rng val_rng = make_stream(cfg.seed, 2);
  const PairSet val = make_pair_set(dataset, split.validation_identities, cfg.validation_pairs, val_rng);
  const PairSet test = make_pair_set(dataset, split.test_identities, cfg.validation_pairs, val_rng);
  const BatchSources sources{&dataset, split.train_identities, generator};
  AdamOptimizer opt(model.parameters(), cfg.optimizer);
  TrainConfig warmup = cfg;
  warmup.adversarial_training = false;

  const auto start = std::chrono::steady_clock::now();
  double loss_sum = 0.0;
  int loss_count = 0;
  double min_val = std::numeric_limits<double>::infinity();

  for (long step = 1; step <= cfg.total_steps; ++step) {
    const Batch batch = assemble_batch(step <= cfg.clean_warmup_steps ? warmup : cfg, sources, model, batch_rng);
    StepLoss sl = batch_loss(model, batch, cfg, generator);
    if (!std::isfinite(sl.loss) || !sl.grad.all_finite()) {
      TrainingAborted err("non-finite loss at step " + std::to_string(step));
      if (options.run_dir) {
        const auto path = *options.run_dir / "diagnostic.json";
        save_checkpoint(make_checkpoint(model, step, serialize_rng(batch_rng)), path);
        err.diagnostic_checkpoint = path;
      }
      throw err;
    }
    opt.step(model, sl.grad);
    loss_sum += sl.loss;
    ++loss_count;
    if (options.on_step)
      options.on_step(StepAudit{step, sl.loss, sl.max_grad_y, sl.max_grad_u,
                                generator ? generator->accumulated_gradient_norm() : 0.0,
                                static_cast<int>(batch.attacked.size())});

    if (step % cfg.validation_interval == 0 || step == cfg.total_steps) {
      RunRecord r;
      r.step = step;
      r.train_loss = loss_sum / loss_count;
      const auto vm = evaluate_pairs(model, val, cfg.loss);
      r.val_loss = vm.loss;
      r.val_auroc = vm.auroc;
      r.test_loss = evaluate_pairs(model, test, cfg.loss).loss;
      min_val = std::min(min_val, r.val_loss);
      r.diverged = r.val_loss > (1.0 + cfg.divergence_ratio) * min_val;
      r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      loss_sum = 0.0;
      loss_count = 0;
      out.log.records.push_back(r);
      out.checkpoints.emplace(step, make_checkpoint(model, step, serialize_rng(batch_rng)));
      if (options.run_dir) {
        save_checkpoint(out.checkpoints.at(step), *options.run_dir / checkpoint_name(step));
        write_runlog_csv(out.log, *options.run_dir / "runlog.csv", options.include_wall_time);
      }
      if (options.on_record)
        options.on_record(r);
      out.diverged = out.diverged || r.diverged;
      if (r.diverged && cfg.stop_on_divergence)
        break;
    }
  }

  out.final_model = model;
  out.best_step = out.log.records[out.log.best_index(cfg.early_stop_metric)].step;
  out.model = early_stop_select(out.log, out.checkpoints, cfg.early_stop_metric);
  if (options.run_dir) {
    const auto link = *options.run_dir / "best.json";
    std::filesystem::remove(link);
    std::filesystem::create_symlink(checkpoint_name(out.best_step), link);
  }
  return out;
}

EmbeddingModel early_stop_select(const RunLog &log, const std::map<long, Checkpoint> &checkpoints,
                                 EarlyStopMetric metric) {
  if (checkpoints.empty())
    throw ConfigError("early stopping needs at least one checkpoint");
  RunLog eligible;
  for (const auto &r : log.records)
    if (checkpoints.count(r.step))
      eligible.records.push_back(r);
  if (eligible.empty()) {
    if (checkpoints.size() == 1)
      return model_from(checkpoints.begin()->second);
    throw ConfigError("no logged step has a checkpoint");
  }
  return model_from(checkpoints.at(eligible.records[eligible.best_index(metric)].step));
}

} // namespace rfv::train
