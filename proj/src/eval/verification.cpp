#include "rfv/eval/verification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "rfv/augment/augment.hpp"
#include "rfv/core/json_util.hpp"
#include "rfv/core/parallel.hpp"

namespace rfv::eval {

std::string Tta::name() const {
  if (mirror && select)
    return "both";
  if (mirror)
    return "mirror";
  if (select)
    return "select";
  return "none";
}

Tta Tta::parse(const std::string &name) {
  if (name == "none")
    return {};
  if (name == "mirror")
    return {true, false};
  if (name == "select")
    return {false, true};
  if (name == "both")
    return {true, true};
  throw ConfigError("unknown test-time augmentation '" + name + "' (none, mirror, select, both)");
}

std::size_t medoid(const EmbeddingModel &model, std::span<const LabeledImage> target_set) {
  if (target_set.empty())
    throw ConfigError("target set is empty");
  const MatrixF emb = embed_all(model, target_set);
  const auto n = static_cast<Eigen::Index>(target_set.size());
  std::size_t best = 0;
  double best_sum = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i)
        sum += (emb.col(i) - emb.col(j)).cast<double>().norm();
    if (sum < best_sum) {
      best_sum = sum;
      best = static_cast<std::size_t>(i);
    }
  }
  return best;
}

Enrollment enroll(const EmbeddingModel &model, std::span<const LabeledImage> target_set, bool select,
                  bool store_mirrored) {
  if (target_set.empty())
    throw ConfigError("target set is empty");
  Enrollment e;
  e.chosen = select ? medoid(model, target_set) : 0;
  e.embedding = embed(model, target_set[e.chosen]);
  if (store_mirrored)
    e.mirrored = embed(model, aug::mirror(target_set[e.chosen]));
  return e;
}

double score_enrolled(const EmbeddingModel &model, const LabeledImage &candidate, const Enrollment &target,
                      bool mirror) {
  std::vector<LabeledImage> views{candidate};
  if (mirror)
    views.push_back(aug::mirror(candidate));
  const MatrixF emb = embed_all(model, views);
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index v = 0; v < emb.cols(); ++v) {
    sum += feature_distance(emb.col(v), target.embedding);
    ++count;
    if (target.mirrored) {
      sum += feature_distance(emb.col(v), *target.mirrored);
      ++count;
    }
  }
  return sum / count;
}

double score(const Detector &detector, const LabeledImage &candidate, std::span<const LabeledImage> target_set,
             const Tta &tta) {
  if (!detector.model)
    throw ConfigError("detector has no model");
  const Enrollment e = enroll(*detector.model, target_set, tta.select);
  return score_enrolled(*detector.model, candidate, e, tta.mirror);
}

// ---------------------------------------------------------------------------

TrialPlan make_trial_plan(const synth::Dataset &dataset, const std::vector<int> &identities, const PlanConfig &cfg,
                          Rng &rng) {
  if (cfg.targets < 1 || cfg.intruders_per_target < 1 || cfg.patch_intruders < 0 || cfg.min_target_samples < 2)
    throw ConfigError("trial plan needs targets >= 1, intruders >= 1, patch_intruders >= 0, min samples >= 2");
  std::vector<int> eligible;
  for (int id : identities)
    if (static_cast<int>(dataset.samples_of(id).size()) >= cfg.min_target_samples)
      eligible.push_back(id);
  if (eligible.empty())
    throw ConfigError("no identity has at least " + std::to_string(cfg.min_target_samples) + " samples");
  if (identities.size() < 2)
    throw ConfigError("trial plan needs at least two identities");
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(std::min<std::size_t>(eligible.size(), static_cast<std::size_t>(cfg.targets)));

  TrialPlan plan;
  for (int id : eligible) {
    TargetPlan t;
    t.identity = id;
    t.target_set = dataset.samples_of(id);
    std::vector<std::size_t> pool;
    for (int other : identities)
      if (other != id)
        for (auto i : dataset.samples_of(other))
          pool.push_back(i);
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto n_int = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(cfg.intruders_per_target));
    t.intruders.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_int));
    const auto n_patch = std::min<std::size_t>(pool.size() - n_int, static_cast<std::size_t>(cfg.patch_intruders));
    t.patch_intruders.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_int),
                             pool.begin() + static_cast<std::ptrdiff_t>(n_int + n_patch));
    std::sort(t.intruders.begin(), t.intruders.end());
    std::sort(t.patch_intruders.begin(), t.patch_intruders.end());
    plan.targets.push_back(std::move(t));
  }
  return plan;
}

namespace {

void check_chosen(const TrialPlan &plan, const std::vector<std::size_t> &chosen) {
  if (chosen.size() != plan.targets.size())
    throw ConfigError("one enrolled image per target is required");
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    const auto &ts = plan.targets[k].target_set;
    if (std::find(ts.begin(), ts.end(), chosen[k]) == ts.end())
      throw ConfigError("enrolled image is not part of the target set");
  }
}

std::vector<std::size_t> genuine_of(const TargetPlan &t, std::size_t chosen) {
  std::vector<std::size_t> out;
  for (auto i : t.target_set)
    if (i != chosen)
      out.push_back(i);
  return out;
}

std::vector<LabeledImage> gather(const synth::Dataset &dataset, const std::vector<std::size_t> &idx) {
  std::vector<LabeledImage> out;
  out.reserve(idx.size());
  for (auto i : idx)
    out.push_back(dataset.image(i));
  return out;
}

} // namespace

std::vector<VerificationTrial> clean_trials(const TrialPlan &plan, const std::vector<std::size_t> &chosen) {
  check_chosen(plan, chosen);
  std::vector<VerificationTrial> out;
  for (std::size_t k = 0; k < plan.targets.size(); ++k) {
    const auto &t = plan.targets[k];
    for (auto g : genuine_of(t, chosen[k]))
      out.push_back({t.identity, t.target_set, g, 0, "clean"});
    for (auto i : t.intruders)
      out.push_back({t.identity, t.target_set, i, 1, "clean"});
  }
  return out;
}

std::vector<std::size_t> enrolled_images(const EmbeddingModel &model, const synth::Dataset &dataset,
                                         const TrialPlan &plan, bool select) {
  std::vector<std::size_t> out;
  for (const auto &t : plan.targets) {
    const auto images = gather(dataset, t.target_set);
    out.push_back(t.target_set[select ? medoid(model, images) : 0]);
  }
  return out;
}

// ---------------------------------------------------------------------------

adv::AttackConfig AttackSpec::universal_default() {
  adv::AttackConfig c = adv::AttackConfig::feature_default();
  c.steps = 5000;
  c.step_size = 0.005;
  c.restarts = 1;
  return c;
}

adv::AttackConfig AttackSpec::distal_default() {
  adv::AttackConfig c = adv::AttackConfig::feature_default();
  c.steps = 2000;
  c.step_size = 0.01;
  c.restarts = 1;
  return c;
}

namespace {

const std::set<std::string> kTypes{"eyeglasses",   "square_patch",    "eye_patch", "random_noise",
                                   "global_noise", "indirect_anchor", "distal"};
const std::set<std::string> kEvadable{"eyeglasses", "square_patch", "indirect_anchor"};

void apply_tanh_options(adv::AttackConfig &c, const nlohmann::json &o) {
  c.steps = o.value("steps", c.steps);
  c.step_size = o.value("step_size", c.step_size);
  c.restarts = o.value("restarts", c.restarts);
}

} // namespace

void AttackSpec::validate() const {
  if (!kTypes.contains(type))
    throw ConfigError("unknown attack '" + type + "'");
  feature.validate();
  square.attack.validate();
  universal.validate();
  distal.validate();
  if (square.probe_steps < 1 || !(square.probe_learning_rate > 0.0))
    throw ConfigError("square search probes need steps >= 1 and a positive learning rate");
  if (noise_patterns < 1)
    throw ConfigError("random_noise needs at least one pattern");
  if (!(noise_magnitude >= 0.0) || noise_magnitude > 1.0)
    throw ConfigError("global_noise magnitude must lie in [0, 1]");
  if (distal_starts < 1)
    throw ConfigError("distal needs at least one start");
}

AttackSpec parse_attack(const std::string &descriptor, const nlohmann::json &options) {
  AttackSpec s;
  s.descriptor = descriptor;
  const auto colon = descriptor.find(':');
  s.type = descriptor.substr(0, colon);
  if (!kTypes.contains(s.type))
    throw ConfigError("unknown attack '" + descriptor + "'");
  if (colon != std::string::npos) {
    const auto suffix = descriptor.substr(colon + 1);
    if (suffix != "evade" || !kEvadable.contains(s.type))
      throw ConfigError("attack '" + descriptor + "': only eyeglasses, square_patch and indirect_anchor take ':evade'");
    s.mode = adv::AttackMode::evade;
  }
  if (!options.is_object())
    throw ConfigError("attack options must be an object");
  reject_unknown_keys(options,
                      {"steps", "step_size", "restarts", "probe_steps", "probe_learning_rate", "patterns", "magnitude",
                       "starts"},
                      "attack " + descriptor);
  if (s.type == "eye_patch")
    apply_tanh_options(s.universal, options);
  else if (s.type == "distal")
    apply_tanh_options(s.distal, options);
  else
    apply_tanh_options(s.feature, options);
  s.feature.mode = s.mode;
  s.square.attack = s.feature;
  s.square.probe_steps = options.value("probe_steps", s.square.probe_steps);
  s.square.probe_learning_rate = options.value("probe_learning_rate", s.square.probe_learning_rate);
  s.noise_patterns = options.value("patterns", s.noise_patterns);
  s.noise_magnitude = options.value("magnitude", s.noise_magnitude);
  s.distal_starts = options.value("starts", s.distal_starts);
  s.validate();
  return s;
}

bool is_known_attack(const std::string &descriptor) {
  try {
    parse_attack(descriptor);
    return true;
  } catch (const ConfigError &) {
    return false;
  }
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json mask_json(const Mask &m) {
  nlohmann::json j{{"height", m.height()}, {"width", m.width()}};
  if (m.rect()) {
    const Rect &r = *m.rect();
    j["rect"] = {r.top, r.left, r.height, r.width};
  } else {
    std::vector<std::size_t> on;
    for (std::size_t i = 0; i < m.grid().size(); ++i)
      if (m.grid()[i])
        on.push_back(i);
    j["pixels"] = on;
  }
  return j;
}

Mask mask_from(const nlohmann::json &j) {
  const int h = j.at("height").get<int>();
  const int w = j.at("width").get<int>();
  if (j.contains("rect")) {
    const auto r = j.at("rect").get<std::vector<int>>();
    if (r.size() != 4)
      throw ConfigError("mask rect needs four values");
    return Mask::rectangle(h, w, Rect{r[0], r[1], r[2], r[3]});
  }
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(h) * w, 0);
  for (auto i : j.at("pixels").get<std::vector<std::size_t>>()) {
    if (i >= grid.size())
      throw ConfigError("mask pixel index out of range");
    grid[i] = 1;
  }
  return Mask::from_grid(h, w, std::move(grid));
}

} // namespace

nlohmann::json to_json(const AttackOutcome &o) {
  return nlohmann::json{{"attack", o.attack},
                        {"target_identity", o.target_identity},
                        {"target_image", o.target_image},
                        {"candidate", o.candidate},
                        {"label", o.label},
                        {"mask", mask_json(o.mask)},
                        {"values", o.values},
                        {"final_distance", o.final_distance},
                        {"record", o.record}};
}

AttackOutcome outcome_from_json(const nlohmann::json &j) {
  reject_unknown_keys(j,
                      {"attack", "target_identity", "target_image", "candidate", "label", "mask", "values",
                       "final_distance", "record"},
                      "attack outcome");
  AttackOutcome o;
  o.attack = j.at("attack").get<std::string>();
  o.target_identity = j.at("target_identity").get<int>();
  o.target_image = j.at("target_image").get<std::size_t>();
  o.candidate = j.at("candidate").get<std::size_t>();
  o.label = j.at("label").get<int>();
  o.mask = mask_from(j.at("mask"));
  o.values = j.at("values").get<std::vector<float>>();
  o.final_distance = j.at("final_distance").get<double>();
  o.record = j.value("record", nlohmann::json::object());
  return o;
}

LabeledImage rebuild(const synth::Dataset &dataset, const AttackOutcome &outcome) {
  if (outcome.candidate >= dataset.size())
    throw ConfigError("attack outcome refers to a missing image");
  LabeledImage img = dataset.image(outcome.candidate);
  if (outcome.mask.height() != img.shape.height || outcome.mask.width() != img.shape.width)
    throw ConfigError("attack outcome mask does not match the dataset images");
  if (outcome.values.size() != outcome.mask.count() * static_cast<std::size_t>(img.shape.channels))
    throw ConfigError("attack outcome values do not match its mask");
  paste_values(img, outcome.mask, outcome.values);
  return img;
}

std::vector<AttackOutcome> best_of(const EmbeddingModel &model, const synth::Dataset &dataset,
                                   std::span<const AttackOutcome> a, std::span<const AttackOutcome> b,
                                   const std::string &name) {
  if (a.size() != b.size())
    throw ConfigError("best_of needs outcome lists over the same pairs");
  std::vector<AttackOutcome> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].target_image != b[i].target_image || a[i].candidate != b[i].candidate)
      throw ConfigError("best_of needs outcome lists over the same pairs");
    const Embedding target = embed(model, dataset.image(a[i].target_image));
    const double da = feature_distance(embed(model, rebuild(dataset, a[i])), target);
    const double db = feature_distance(embed(model, rebuild(dataset, b[i])), target);
    const bool evade = a[i].label == 0;
    AttackOutcome pick = (evade ? db > da : db < da) ? b[i] : a[i];
    pick.final_distance = std::min(da, db);
    if (evade)
      pick.final_distance = std::max(da, db);
    pick.attack = name;
    out.push_back(std::move(pick));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

synth::SyntheticFactorSpec face_layout(const synth::Dataset &dataset) {
  if (dataset.factors)
    return *dataset.factors;
  return synth::SyntheticFactorSpec::standard(dataset.shape());
}

AttackOutcome outcome_of(const std::string &attack, const TargetPlan &t, std::size_t chosen, std::size_t candidate,
                         int label, const adv::AttackResult &r, const nlohmann::json &record) {
  AttackOutcome o;
  o.attack = attack;
  o.target_identity = t.identity;
  o.target_image = chosen;
  o.candidate = candidate;
  o.label = label;
  o.mask = r.best_mask ? *r.best_mask : r.mask;
  o.values = extract_values(r.adversarial_image, o.mask);
  o.final_distance = r.final_distance;
  o.objective_trace = r.objective_trace;
  o.record = record;
  return o;
}

std::vector<AttackOutcome> attack_target(const EmbeddingModel &model, const SuiteContext &ctx, const TargetPlan &t,
                                         std::size_t chosen, const AttackSpec &spec, std::uint64_t seed, Rng &rng) {
  const synth::Dataset &ds = *ctx.dataset;
  const Embedding target = embed(model, ds.image(chosen));
  const bool evade = spec.mode == adv::AttackMode::evade;
  const std::vector<std::size_t> cands = evade ? genuine_of(t, chosen) : t.intruders;
  const int label = evade ? 0 : 1;
  const auto layout = face_layout(ds);
  const int h = ds.shape().height;
  const int w = ds.shape().width;
  std::vector<AttackOutcome> out;

  auto record = [&](const adv::AttackResult &r, int steps) {
    return adv::attack_record(spec.descriptor, r, seed, steps, std::nullopt, spec.mode);
  };

  if (spec.type == "eyeglasses" || spec.type == "indirect_anchor") {
    Embedding anchor = target;
    if (spec.type == "indirect_anchor") {
      if (!ctx.generator)
        throw ConfigError("indirect_anchor needs a generator");
      anchor = embed(model, gen::autoencode(*ctx.generator, ds.image(chosen), rng));
    }
    const Mask mask = adv::eyeglasses_mask(layout, ctx.geometry);
    std::vector<adv::FeatureProblem> problems;
    for (auto c : cands)
      problems.push_back({&ds.image(c), mask, anchor});
    auto results = adv::feature_adversary_batch(model, problems, spec.feature, rng);
    for (std::size_t i = 0; i < cands.size(); ++i) {
      auto &r = results[i];
      r.final_distance = feature_distance(embed(model, r.adversarial_image), target);
      out.push_back(outcome_of(spec.descriptor, t, chosen, cands[i], label, r,
                               record(r, spec.feature.steps)));
    }
  } else if (spec.type == "square_patch") {
    std::vector<const LabeledImage *> starts;
    std::vector<Embedding> targets;
    for (auto c : cands) {
      starts.push_back(&ds.image(c));
      targets.push_back(target);
    }
    const auto results = adv::square_patch_search_batch(model, starts, targets, ctx.geometry, spec.square, rng);
    for (std::size_t i = 0; i < cands.size(); ++i)
      out.push_back(outcome_of(spec.descriptor, t, chosen, cands[i], label, results[i],
                               record(results[i], spec.square.attack.steps)));
  } else if (spec.type == "eye_patch") {
    const Mask mask = adv::eye_patch_mask(layout, ctx.geometry);
    if (t.patch_intruders.empty())
      throw ConfigError("eye_patch needs patch intruders in the trial plan");
    const auto train_set = gather(ds, t.patch_intruders);
    const auto patch = adv::universal_patch(model, train_set, mask, target, spec.universal, rng);
    for (auto c : cands) {
      adv::AttackResult r;
      r.mask = mask;
      r.adversarial_image = ds.image(c);
      paste_values(r.adversarial_image, mask, patch.perturbation);
      r.final_distance = feature_distance(embed(model, r.adversarial_image), target);
      r.objective_trace = patch.objective_trace;
      out.push_back(outcome_of(spec.descriptor, t, chosen, c, label, r, record(r, spec.universal.steps)));
    }
  } else if (spec.type == "random_noise") {
    const Mask mask = adv::eyeglasses_mask(layout, ctx.geometry);
    for (auto c : cands) {
      const auto r = adv::random_noise_attack(model, ds.image(c), mask, target, spec.noise_patterns, rng);
      out.push_back(outcome_of(spec.descriptor, t, chosen, c, label, r, record(r, spec.noise_patterns)));
    }
  } else if (spec.type == "global_noise") {
    const Mask mask = Mask::full(h, w);
    for (auto c : cands) {
      adv::AttackResult r;
      r.mask = mask;
      r.adversarial_image = adv::global_uniform_noise(ds.image(c), spec.noise_magnitude, rng);
      r.final_distance = feature_distance(embed(model, r.adversarial_image), target);
      out.push_back(outcome_of(spec.descriptor, t, chosen, c, label, r, record(r, 1)));
    }
  } else if (spec.type == "distal") {
    const Mask mask = Mask::full(h, w);
    std::vector<LabeledImage> starts;
    for (int s = 0; s < spec.distal_starts; ++s) {
      LabeledImage noise(ds.shape());
      aug::fill_uniform(noise, mask, rng);
      starts.push_back(std::move(noise));
    }
    std::vector<adv::FeatureProblem> problems;
    for (const auto &s : starts)
      problems.push_back({&s, mask, target});
    const auto results = adv::feature_adversary_batch(model, problems, spec.distal, rng);
    for (std::size_t i = 0; i < results.size(); ++i)
      out.push_back(outcome_of(spec.descriptor, t, chosen, chosen, 1, results[i],
                               record(results[i], spec.distal.steps)));
  }
  return out;
}

} // namespace

std::vector<AttackOutcome> run_attack(const EmbeddingModel &model, const SuiteContext &ctx, const TrialPlan &plan,
                                      const std::vector<std::size_t> &chosen, const AttackSpec &spec) {
  if (!ctx.dataset)
    throw ConfigError("suite context has no dataset");
  spec.validate();
  check_chosen(plan, chosen);
  const std::uint64_t base = ctx.seed ^ fnv1a(spec.descriptor);
  std::vector<std::vector<AttackOutcome>> per_target(plan.targets.size());
  parallel_for(plan.targets.size(), ctx.jobs, [&](std::size_t k) {
    const std::uint64_t stream = static_cast<std::uint64_t>(k) + 1 + (fnv1a(std::to_string(chosen[k])) << 20);
    Rng rng = make_stream(base, stream);
    per_target[k] = attack_target(model, ctx, plan.targets[k], chosen[k], spec, base + stream, rng);
  });
  std::vector<AttackOutcome> out;
  for (auto &v : per_target)
    for (auto &o : v)
      out.push_back(std::move(o));
  return out;
}

// ---------------------------------------------------------------------------

const MetricRow &MetricReport::row(const std::string &attack, const std::string &tta) const {
  for (const auto &r : rows)
    if (r.attack == attack && r.tta == tta)
      return r;
  throw ConfigError("report has no row for " + attack + " / " + tta);
}

nlohmann::json to_json(const MetricReport &report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto &r : report.rows) {
    nlohmann::json j{{"attack", r.attack},   {"tta", r.tta},           {"au_roc", r.au_roc},
                     {"au_pr", r.au_pr},     {"positives", r.positives}, {"negatives", r.negatives}};
    j["detection_rate"] = r.detection_rate ? nlohmann::json(*r.detection_rate) : nlohmann::json(nullptr);
    rows.push_back(std::move(j));
  }
  return nlohmann::json{{"fpr", report.fpr}, {"thresholds", report.thresholds}, {"rows", rows}};
}

std::string to_csv(const MetricReport &report) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "attack,tta,au_roc,au_pr,detection_rate\n";
  for (const auto &r : report.rows) {
    os << r.attack << ',' << r.tta << ',' << r.au_roc << ',' << r.au_pr << ',';
    if (r.detection_rate)
      os << *r.detection_rate;
    os << '\n';
  }
  return os.str();
}

namespace {

struct Enrolled {
  std::vector<Enrollment> enrollments;
  std::vector<std::size_t> images; // dataset index per target
};

Enrolled enroll_plan(const EmbeddingModel &model, const synth::Dataset &dataset, const TrialPlan &plan, bool select,
                     bool store_mirrored) {
  Enrolled e;
  for (const auto &t : plan.targets) {
    const auto images = gather(dataset, t.target_set);
    e.enrollments.push_back(enroll(model, images, select, store_mirrored));
    e.images.push_back(t.target_set[e.enrollments.back().chosen]);
  }
  return e;
}

std::vector<double> genuine_for(const EmbeddingModel &model, const synth::Dataset &dataset, const TrialPlan &plan,
                                 const Enrolled &e, bool mirror) {
  std::vector<double> out;
  for (std::size_t k = 0; k < plan.targets.size(); ++k)
    for (auto g : genuine_of(plan.targets[k], e.images[k]))
      out.push_back(score_enrolled(model, dataset.image(g), e.enrollments[k], mirror));
  return out;
}

MetricRow make_row(const std::string &attack, const std::string &tta, const std::vector<double> &negatives,
                   const std::vector<double> &positives) {
  MetricRow row;
  row.attack = attack;
  row.tta = tta;
  std::vector<double> scores = negatives;
  scores.insert(scores.end(), positives.begin(), positives.end());
  std::vector<int> labels(negatives.size(), 0);
  labels.resize(scores.size(), 1);
  const auto m = auroc_aupr(scores, labels);
  row.au_roc = m.au_roc;
  row.au_pr = m.au_pr;
  row.negatives = negatives.size();
  row.positives = positives.size();
  row.scores = std::move(scores);
  row.labels = std::move(labels);
  return row;
}

} // namespace

std::vector<double> genuine_scores(const EmbeddingModel &model, const synth::Dataset &dataset, const TrialPlan &plan,
                                   const Tta &tta) {
  const Enrolled e = enroll_plan(model, dataset, plan, tta.select, false);
  return genuine_for(model, dataset, plan, e, tta.mirror);
}

MetricReport score_suite(const EmbeddingModel &model, const SuiteContext &ctx, const TrialPlan &plan,
                         const std::map<std::string, std::vector<AttackOutcome>> &outcomes,
                         const ScoreOptions &options) {
  if (!ctx.dataset)
    throw ConfigError("suite context has no dataset");
  if (options.ttas.empty())
    throw ConfigError("at least one test-time augmentation is required");
  const synth::Dataset &ds = *ctx.dataset;
  MetricReport report;
  report.fpr = options.fpr;
  for (const Tta &tta : options.ttas) {
    const std::string tn = tta.name();
    const Enrolled e = enroll_plan(model, ds, plan, tta.select, ctx.store_mirrored_target);
    std::map<int, std::size_t> slot; // identity -> target index
    for (std::size_t k = 0; k < plan.targets.size(); ++k)
      slot[plan.targets[k].identity] = k;

    const auto genuine = genuine_for(model, ds, plan, e, tta.mirror);
    std::vector<double> intruders;
    for (std::size_t k = 0; k < plan.targets.size(); ++k)
      for (auto i : plan.targets[k].intruders)
        intruders.push_back(score_enrolled(model, ds.image(i), e.enrollments[k], tta.mirror));
    const auto cal = options.calibration.find(tn);
    const double delta =
        calibrate_threshold(cal != options.calibration.end() ? cal->second : genuine, options.fpr);
    report.thresholds[tn] = delta;
    report.rows.push_back(make_row("clean", tn, genuine, intruders));
    std::vector<double> target_delta(plan.targets.size(), delta);
    if (options.per_target_calibration)
      for (std::size_t k = 0; k < plan.targets.size(); ++k) {
        std::vector<double> own;
        for (auto g : genuine_of(plan.targets[k], e.images[k]))
          own.push_back(score_enrolled(model, ds.image(g), e.enrollments[k], tta.mirror));
        target_delta[k] = calibrate_threshold(own, options.fpr);
      }

    for (const auto &[name, list] : outcomes) {
      std::vector<double> attacked;
      std::size_t verified = 0;
      bool evade = false;
      for (const auto &o : list) {
        const auto it = slot.find(o.target_identity);
        if (it == slot.end() || e.images[it->second] != o.target_image)
          continue;
        evade = o.label == 0;
        attacked.push_back(score_enrolled(model, rebuild(ds, o), e.enrollments[it->second], tta.mirror));
        if (attacked.back() < target_delta[it->second])
          ++verified;
      }
      if (attacked.empty())
        throw ConfigError("attack '" + name + "' has no outcomes for the enrolled targets under tta " + tn);
      if (evade) {
        MetricRow row = make_row(name, tn, attacked, intruders);
        // detected = the attacked genuine image is still verified as the target
        row.detection_rate = static_cast<double>(verified) / static_cast<double>(attacked.size());
        report.rows.push_back(std::move(row));
      } else {
        report.rows.push_back(make_row(name, tn, genuine, attacked));
      }
    }
  }
  return report;
}

std::map<std::string, std::vector<AttackOutcome>> run_attacks(const EmbeddingModel &model, const SuiteContext &ctx,
                                                               const TrialPlan &plan,
                                                               std::span<const AttackSpec> attacks,
                                                               std::span<const Tta> ttas) {
  if (!ctx.dataset)
    throw ConfigError("suite context has no dataset");
  std::set<bool> selects;
  for (const auto &t : ttas)
    selects.insert(t.select);
  std::vector<std::vector<std::size_t>> chosen;
  for (bool sel : selects)
    chosen.push_back(enrolled_images(model, *ctx.dataset, plan, sel));
  std::map<std::string, std::vector<AttackOutcome>> outcomes;
  for (const auto &spec : attacks) {
    if (outcomes.contains(spec.descriptor))
      throw ConfigError("attack '" + spec.descriptor + "' requested twice");
    auto &list = outcomes[spec.descriptor];
    for (std::size_t s = 0; s < chosen.size(); ++s) {
      TrialPlan sub;
      std::vector<std::size_t> sub_chosen;
      for (std::size_t k = 0; k < plan.targets.size(); ++k)
        if (s == 0 || chosen[0][k] != chosen[s][k]) {
          sub.targets.push_back(plan.targets[k]);
          sub_chosen.push_back(chosen[s][k]);
        }
      auto run = run_attack(model, ctx, sub, sub_chosen, spec);
      list.insert(list.end(), std::make_move_iterator(run.begin()), std::make_move_iterator(run.end()));
    }
  }
  return outcomes;
}

MetricReport evaluate_suite(const Detector &detector, const SuiteContext &ctx, const TrialPlan &plan,
                            std::span<const AttackSpec> attacks, const ScoreOptions &options,
                            std::map<std::string, std::vector<AttackOutcome>> *outcomes_out) {
  if (!detector.model)
    throw ConfigError("detector has no model");
  auto outcomes = run_attacks(*detector.model, ctx, plan, attacks, options.ttas);
  MetricReport report = score_suite(*detector.model, ctx, plan, outcomes, options);
  if (outcomes_out)
    *outcomes_out = std::move(outcomes);
  return report;
}

} // namespace rfv::eval
