#include "rfv/adversary/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "rfv/losses/losses.hpp"

namespace rfv::adv {

namespace {

constexpr double kSquash = 1e-6;
constexpr std::size_t kChunk = 64;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

double mode_sign(AttackMode mode) { return mode == AttackMode::impersonate ? 1.0 : -1.0; }

/// Elementwise Adam state over a flat variable vector.
struct Adam {
  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
  void step(std::vector<double> &w, const std::vector<double> &g, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(kAdamBeta1, t);
    const double c2 = 1.0 - std::pow(kAdamBeta2, t);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
    }
  }
  std::vector<double> m, v;
  int t = 0;
};

void check_target(const EmbeddingModel &model, const Embedding &target) {
  if (target.size() != model.architecture().embedding_dim)
    throw ShapeError("target embedding has dimension " + std::to_string(target.size()) + ", model emits " +
                     std::to_string(model.architecture().embedding_dim));
}

void check_image(const EmbeddingModel &model, const LabeledImage &image, const Mask &mask) {
  if (image.shape != model.architecture().input)
    throw ConfigError("image shape " + image.shape.to_string() + " does not match model input");
  if (mask.height() != image.shape.height || mask.width() != image.shape.width)
    throw ShapeError("mask does not match image");
}

AttackResult finish(const EmbeddingModel &model, const LabeledImage &start, LabeledImage adversarial,
                    const Mask &mask, const Embedding &target) {
  AttackResult r;
  r.perturbation.resize(start.pixels.size());
  for (std::size_t i = 0; i < start.pixels.size(); ++i)
    r.perturbation[i] = adversarial.pixels[i] - start.pixels[i];
  r.final_distance = feature_distance(embed(model, adversarial), target);
  r.adversarial_image = std::move(adversarial);
  r.mask = mask;
  return r;
}

} // namespace

AttackConfig AttackConfig::training_pgd() { return AttackConfig{}; }

AttackConfig AttackConfig::feature_default() {
  AttackConfig c;
  c.steps = 1000;
  c.step_size = 0.01;
  c.restarts = 5;
  c.parameterization = Parameterization::tanh;
  return c;
}

void AttackConfig::validate() const {
  if (steps < 0)
    throw ConfigError("attack steps must be >= 0");
  if (restarts < 1)
    throw ConfigError("attack restarts must be >= 1");
  if (!(epsilon > 0.0))
    throw ConfigError("attack epsilon must be positive");
  if (!(step_size > 0.0))
    throw ConfigError("attack step size must be positive");
}

std::string to_string(AttackMode mode) { return mode == AttackMode::impersonate ? "impersonate" : "evade"; }

void to_json(nlohmann::json &j, const AttackConfig &cfg) {
  j = nlohmann::json{{"steps", cfg.steps},
                     {"step_size", cfg.step_size},
                     {"restarts", cfg.restarts},
                     {"epsilon", cfg.epsilon},
                     {"mode", to_string(cfg.mode)},
                     {"parameterization", cfg.parameterization == Parameterization::tanh ? "tanh" : "pgd_clip"}};
}

void from_json(const nlohmann::json &j, AttackConfig &cfg) {
  static const std::vector<std::string> known = {"steps", "step_size", "restarts", "epsilon", "mode",
                                                 "parameterization"};
  for (const auto &[k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ConfigError("unknown attack config key '" + k + "'");
  cfg.steps = j.value("steps", cfg.steps);
  cfg.step_size = j.value("step_size", cfg.step_size);
  cfg.restarts = j.value("restarts", cfg.restarts);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  if (j.contains("mode")) {
    const auto m = j.at("mode").get<std::string>();
    if (m == "impersonate")
      cfg.mode = AttackMode::impersonate;
    else if (m == "evade")
      cfg.mode = AttackMode::evade;
    else
      throw ConfigError("attack mode must be impersonate or evade");
  }
  if (j.contains("parameterization")) {
    const auto p = j.at("parameterization").get<std::string>();
    if (p == "tanh")
      cfg.parameterization = Parameterization::tanh;
    else if (p == "pgd_clip")
      cfg.parameterization = Parameterization::pgd_clip;
    else
      throw ConfigError("parameterization must be tanh or pgd_clip");
  }
  cfg.validate();
}

SquaredDistanceEval squared_distance(const EmbeddingModel &model, const MatrixF &images, const MatrixF &refs,
                                     bool need_grad) {
  if (refs.cols() != images.cols())
    throw ShapeError("one reference embedding per image is required");
  SquaredDistanceEval out;
  EmbeddingModel::Tape tape;
  const MatrixF emb = model.forward(images, need_grad ? &tape : nullptr);
  const MatrixF diff = emb - refs;
  out.values = (emb.cast<double>() - refs.cast<double>()).colwise().squaredNorm().transpose();
  if (need_grad) {
    const MatrixF g = 2.0f * diff;
    model.backward(tape, g, nullptr, &out.input_grad);
  }
  return out;
}

MatrixF pgd_patch_batch(const EmbeddingModel &model, const MatrixF &images, std::span<const Mask> masks,
                        const MatrixF &refs, Direction direction, const AttackConfig &cfg, VectorD *final_objective) {
  cfg.validate();
  if (static_cast<Eigen::Index>(masks.size()) != images.cols())
    throw ShapeError("one mask per image is required");
  const int channels = model.architecture().input.channels;
  const MatrixF mm = loss::mask_matrix<float>(masks, channels);
  const auto eps = static_cast<float>(cfg.epsilon);
  const MatrixF lo = (images.array() - eps).cwiseMax(0.0f).matrix();
  const MatrixF hi = (images.array() + eps).cwiseMin(1.0f).matrix();
  const float step = static_cast<float>(cfg.step_size) * (direction == Direction::ascend ? 1.0f : -1.0f);
  const auto inside = (mm.array() > 0.0f);
  MatrixF adv = images;
  for (int s = 0; s < cfg.steps; ++s) {
    const auto eval = squared_distance(model, adv, refs, true);
    MatrixF moved = adv + step * eval.input_grad.array().sign().matrix();
    moved = moved.cwiseMax(lo).cwiseMin(hi);
    adv = inside.select(moved, images);
  }
  if (final_objective)
    *final_objective = squared_distance(model, adv, refs, false).values;
  return adv;
}

AttackResult pgd_patch_step(const EmbeddingModel &model, const LabeledImage &image, const Mask &mask,
                            const Embedding &reference, Direction direction, const AttackConfig &cfg, Rng *rng) {
  if (cfg.parameterization != Parameterization::pgd_clip)
    throw ConfigError("pgd_patch_step needs the pgd_clip parameterization");
  check_image(model, image, mask);
  check_target(model, reference);
  if (cfg.restarts > 1 && !rng)
    throw ConfigError("random PGD restarts need an RNG");
  const int restarts = cfg.restarts;
  std::vector<LabeledImage> starts;
  for (int r = 0; r < restarts; ++r) {
    LabeledImage s = image;
    if (r > 0) {
      std::uniform_real_distribution<float> dist(-static_cast<float>(cfg.epsilon), static_cast<float>(cfg.epsilon));
      for (auto idx : mask.pixel_indices(image.shape.channels))
        s.pixels[idx] = std::clamp(image.pixels[idx] + dist(*rng), 0.0f, 1.0f);
    }
    starts.push_back(std::move(s));
  }
  const MatrixF batch = to_columns(std::span<const LabeledImage>(starts));
  MatrixF refs = reference.replicate(1, restarts);
  std::vector<Mask> masks(static_cast<std::size_t>(restarts), mask);
  // The epsilon box is anchored at the clean image for every restart.
  const MatrixF anchor = to_column(image).replicate(1, restarts);
  const MatrixF mm = loss::mask_matrix<float>(masks, image.shape.channels);
  const auto eps = static_cast<float>(cfg.epsilon);
  const MatrixF lo = (anchor.array() - eps).cwiseMax(0.0f).matrix();
  const MatrixF hi = (anchor.array() + eps).cwiseMin(1.0f).matrix();
  const float step = static_cast<float>(cfg.step_size) * (direction == Direction::ascend ? 1.0f : -1.0f);
  const auto inside = (mm.array() > 0.0f);
  MatrixF adv = batch;
  for (int s = 0; s < cfg.steps; ++s) {
    const auto eval = squared_distance(model, adv, refs, true);
    MatrixF moved = adv + step * eval.input_grad.array().sign().matrix();
    moved = moved.cwiseMax(lo).cwiseMin(hi);
    adv = inside.select(moved, anchor);
  }
  const VectorD objective = squared_distance(model, adv, refs, false).values;
  Eigen::Index best = 0;
  for (Eigen::Index r = 1; r < objective.size(); ++r) {
    const bool better = direction == Direction::ascend ? objective[r] > objective[best] : objective[r] < objective[best];
    if (better)
      best = r;
  }
  AttackResult result = finish(model, image, from_column(adv.col(best), image), mask, reference);
  result.final_objective = objective[best];
  result.objective_trace = {objective[best]};
  result.iterations = cfg.steps;
  return result;
}

double to_tanh_space(double pixel) {
  const double p = kSquash + (1.0 - 2.0 * kSquash) * std::clamp(pixel, 0.0, 1.0);
  return std::atanh(2.0 * p - 1.0);
}

float from_tanh_space(double w) {
  return std::clamp(static_cast<float>(0.5 * (std::tanh(w) + 1.0)), 0.0f, 1.0f);
}

std::vector<TanhOutcome> run_tanh_adam(const EmbeddingModel &model, std::span<const TanhInstance> instances,
                                       int steps, double learning_rate, AttackMode mode) {
  if (steps < 0)
    throw ConfigError("steps must be >= 0");
  const double sign = mode_sign(mode);
  const int channels = model.architecture().input.channels;
  std::vector<TanhOutcome> out(instances.size());
  for (std::size_t begin = 0; begin < instances.size(); begin += kChunk) {
    const std::size_t end = std::min(instances.size(), begin + kChunk);
    const auto n = static_cast<Eigen::Index>(end - begin);
    MatrixF base(static_cast<Eigen::Index>(model.architecture().input.size()), n);
    MatrixF targets(model.architecture().embedding_dim, n);
    std::vector<std::vector<std::size_t>> idx(static_cast<std::size_t>(n));
    std::vector<std::vector<double>> w(static_cast<std::size_t>(n));
    std::vector<Adam> adam;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto &inst = instances[begin + static_cast<std::size_t>(i)];
      check_image(model, *inst.start, inst.mask);
      check_target(model, inst.target);
      base.col(i) = to_column(*inst.start);
      targets.col(i) = inst.target;
      idx[i] = inst.mask.pixel_indices(channels);
      if (!inst.init.empty() && inst.init.size() != idx[i].size())
        throw ShapeError("initial patch size does not match the mask");
      w[i].resize(idx[i].size());
      for (std::size_t k = 0; k < idx[i].size(); ++k)
        w[i][k] = to_tanh_space(inst.init.empty() ? inst.start->pixels[idx[i][k]] : inst.init[k]);
      adam.emplace_back(idx[i].size());
      auto &o = out[begin + static_cast<std::size_t>(i)];
      o.best_objective = std::numeric_limits<double>::infinity();
      o.trace.reserve(static_cast<std::size_t>(steps) + 1);
    }
    MatrixF images = base;
    std::vector<double> grad;
    for (int k = 0; k <= steps; ++k) {
      for (Eigen::Index i = 0; i < n; ++i)
        for (std::size_t q = 0; q < idx[i].size(); ++q)
          images(static_cast<Eigen::Index>(idx[i][q]), i) = from_tanh_space(w[i][q]);
      const auto eval = squared_distance(model, images, targets, k < steps);
      for (Eigen::Index i = 0; i < n; ++i) {
        auto &o = out[begin + static_cast<std::size_t>(i)];
        const double obj = sign * eval.values[i];
        if (obj < o.best_objective) {
          o.best_objective = obj;
          o.best_values.resize(idx[i].size());
          for (std::size_t q = 0; q < idx[i].size(); ++q)
            o.best_values[q] = images(static_cast<Eigen::Index>(idx[i][q]), i);
        }
        o.trace.push_back(o.best_objective);
      }
      if (k == steps)
        break;
      for (Eigen::Index i = 0; i < n; ++i) {
        grad.resize(idx[i].size());
        for (std::size_t q = 0; q < idx[i].size(); ++q) {
          const double th = std::tanh(w[i][q]);
          grad[q] = sign * eval.input_grad(static_cast<Eigen::Index>(idx[i][q]), i) * 0.5 * (1.0 - th * th);
        }
        adam[static_cast<std::size_t>(i)].step(w[i], grad, learning_rate);
      }
    }
  }
  return out;
}

std::vector<AttackResult> feature_adversary_batch(const EmbeddingModel &model, std::span<const FeatureProblem> problems,
                                                  const AttackConfig &cfg, Rng &rng) {
  cfg.validate();
  if (cfg.parameterization != Parameterization::tanh)
    throw ConfigError("feature_adversary needs the tanh parameterization");
  std::vector<TanhInstance> instances;
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  for (const auto &p : problems) {
    if (!p.start)
      throw ConfigError("feature problem without a start image");
    check_image(model, *p.start, p.mask);
    check_target(model, p.target);
    const auto count = p.mask.pixel_indices(p.start->shape.channels).size();
    for (int r = 0; r < cfg.restarts; ++r) {
      TanhInstance inst{p.start, p.mask, p.target, {}};
      if (r > 0) {
        inst.init.resize(count);
        for (auto &v : inst.init)
          v = dist(rng);
      }
      instances.push_back(std::move(inst));
    }
  }
  const auto outcomes = run_tanh_adam(model, instances, cfg.steps, cfg.step_size, cfg.mode);
  std::vector<AttackResult> results;
  results.reserve(problems.size());
  const auto R = static_cast<std::size_t>(cfg.restarts);
  for (std::size_t i = 0; i < problems.size(); ++i) {
    std::size_t best = i * R;
    for (std::size_t r = 1; r < R; ++r)
      if (outcomes[i * R + r].best_objective < outcomes[best].best_objective)
        best = i * R + r;
    const auto &p = problems[i];
    LabeledImage adv = *p.start;
    paste_values(adv, p.mask, outcomes[best].best_values);
    AttackResult result = finish(model, *p.start, std::move(adv), p.mask, p.target);
    result.objective_trace = outcomes[best].trace;
    result.final_objective = outcomes[best].best_objective;
    result.iterations = cfg.steps;
    results.push_back(std::move(result));
  }
  return results;
}

AttackResult feature_adversary(const EmbeddingModel &model, const LabeledImage &start, const Mask &mask,
                               const Embedding &target, const AttackConfig &cfg, Rng &rng) {
  const FeatureProblem p{&start, mask, target};
  return std::move(feature_adversary_batch(model, std::span<const FeatureProblem>(&p, 1), cfg, rng).front());
}

std::vector<AttackResult> square_patch_search_batch(const EmbeddingModel &model,
                                                    std::span<const LabeledImage *const> starts,
                                                    std::span<const Embedding> targets, const MaskGeometry &geometry,
                                                    const SquareSearchConfig &cfg, Rng &rng,
                                                    std::vector<std::vector<double>> *probe_objectives) {
  if (starts.size() != targets.size())
    throw ShapeError("one target per start image is required");
  std::vector<FeatureProblem> chosen;
  if (probe_objectives)
    probe_objectives->clear();
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const LabeledImage &start = *starts[i];
    const auto windows =
        grid_windows(start.shape.height, start.shape.width, geometry.square_size, geometry.square_stride);
    std::vector<TanhInstance> probes;
    probes.reserve(windows.size());
    for (const auto &w : windows)
      probes.push_back(
          TanhInstance{&start, Mask::rectangle(start.shape.height, start.shape.width, w), targets[i], {}});
    const auto outcomes = run_tanh_adam(model, probes, cfg.probe_steps, cfg.probe_learning_rate, cfg.attack.mode);
    std::size_t best = 0;
    for (std::size_t k = 1; k < outcomes.size(); ++k)
      if (outcomes[k].best_objective < outcomes[best].best_objective)
        best = k;
    if (probe_objectives) {
      probe_objectives->emplace_back();
      for (const auto &o : outcomes)
        probe_objectives->back().push_back(o.best_objective);
    }
    chosen.push_back(FeatureProblem{&start, probes[best].mask, targets[i]});
  }
  auto results = feature_adversary_batch(model, chosen, cfg.attack, rng);
  for (std::size_t i = 0; i < results.size(); ++i)
    results[i].best_mask = chosen[i].mask;
  return results;
}

AttackResult square_patch_search(const EmbeddingModel &model, const LabeledImage &start, const Embedding &target,
                                 const MaskGeometry &geometry, const SquareSearchConfig &cfg, Rng &rng,
                                 std::vector<double> *probe_objectives) {
  const LabeledImage *p = &start;
  std::vector<std::vector<double>> probes;
  auto results = square_patch_search_batch(model, std::span<const LabeledImage *const>(&p, 1),
                                           std::span<const Embedding>(&target, 1), geometry, cfg, rng,
                                           probe_objectives ? &probes : nullptr);
  if (probe_objectives)
    *probe_objectives = std::move(probes.front());
  return std::move(results.front());
}

namespace {

MatrixF patched_batch(std::span<const LabeledImage> intruders, const std::vector<std::size_t> &idx,
                      const std::vector<double> &w) {
  MatrixF images = to_columns(intruders);
  for (Eigen::Index i = 0; i < images.cols(); ++i)
    for (std::size_t q = 0; q < idx.size(); ++q)
      images(static_cast<Eigen::Index>(idx[q]), i) = from_tanh_space(w[q]);
  return images;
}

} // namespace

double universal_objective(const EmbeddingModel &model, std::span<const LabeledImage> intruders, const Mask &mask,
                           const Embedding &target, const std::vector<double> &w, AttackMode mode) {
  if (intruders.empty())
    throw ConfigError("universal patch needs at least one intruder");
  const auto idx = mask.pixel_indices(intruders.front().shape.channels);
  if (idx.size() != w.size())
    throw ShapeError("patch variable count does not match the mask");
  const MatrixF images = patched_batch(intruders, idx, w);
  const MatrixF refs = target.replicate(1, images.cols());
  return mode_sign(mode) * squared_distance(model, images, refs, false).values.mean();
}

double tanh_objective(const EmbeddingModel &model, const LabeledImage &start, const Mask &mask,
                      const Embedding &target, const std::vector<double> &w, AttackMode mode) {
  check_image(model, start, mask);
  LabeledImage img = start;
  const auto idx = mask.pixel_indices(start.shape.channels);
  if (idx.size() != w.size())
    throw ShapeError("patch variable count does not match the mask");
  for (std::size_t q = 0; q < idx.size(); ++q)
    img.pixels[idx[q]] = from_tanh_space(w[q]);
  const double d = feature_distance(embed(model, img), target);
  return mode_sign(mode) * d * d;
}

AttackResult universal_patch(const EmbeddingModel &model, std::span<const LabeledImage> intruders, const Mask &mask,
                             const Embedding &target, const AttackConfig &cfg, Rng &rng) {
  cfg.validate();
  if (intruders.empty())
    throw ConfigError("universal patch needs at least one intruder");
  for (const auto &img : intruders)
    check_image(model, img, mask);
  check_target(model, target);
  const auto idx = mask.pixel_indices(intruders.front().shape.channels);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> w(idx.size());
  for (auto &v : w)
    v = to_tanh_space(dist(rng));
  const double sign = mode_sign(cfg.mode);
  const auto n = static_cast<Eigen::Index>(intruders.size());
  const MatrixF refs_all = target.replicate(1, n);
  Adam adam(w.size());
  std::vector<double> best_w = w;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  std::vector<double> grad(w.size());
  for (int k = 0; k <= cfg.steps; ++k) {
    const MatrixF images = patched_batch(intruders, idx, w);
    double total = 0.0;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (Eigen::Index b = 0; b < n; b += static_cast<Eigen::Index>(kChunk)) {
      const Eigen::Index m = std::min<Eigen::Index>(static_cast<Eigen::Index>(kChunk), n - b);
      const auto eval = squared_distance(model, images.middleCols(b, m), refs_all.middleCols(b, m), k < cfg.steps);
      total += eval.values.sum();
      if (k < cfg.steps)
        for (std::size_t q = 0; q < idx.size(); ++q)
          grad[q] += eval.input_grad.row(static_cast<Eigen::Index>(idx[q])).cast<double>().sum();
    }
    const double obj = sign * total / static_cast<double>(n);
    if (obj < best) {
      best = obj;
      best_w = w;
    }
    trace.push_back(best);
    if (k == cfg.steps)
      break;
    for (std::size_t q = 0; q < idx.size(); ++q) {
      const double th = std::tanh(w[q]);
      grad[q] = sign * grad[q] / static_cast<double>(n) * 0.5 * (1.0 - th * th);
    }
    adam.step(w, grad, cfg.step_size);
  }
  std::vector<float> patch(idx.size());
  for (std::size_t q = 0; q < idx.size(); ++q)
    patch[q] = from_tanh_space(best_w[q]);
  LabeledImage adv = intruders.front();
  paste_values(adv, mask, patch);
  AttackResult result = finish(model, intruders.front(), std::move(adv), mask, target);
  result.perturbation = std::move(patch);
  result.objective_trace = std::move(trace);
  result.final_objective = best;
  result.iterations = cfg.steps;
  return result;
}

std::vector<double> window_sums(const std::vector<double> &map, int height, int width, std::span<const Rect> windows) {
  if (map.size() != static_cast<std::size_t>(height) * width)
    throw ShapeError("map size does not match its dimensions");
  // sat[(y)*(W+1)+x] = sum of map over rows < y and cols < x
  std::vector<double> sat(static_cast<std::size_t>(height + 1) * (width + 1), 0.0);
  const auto stride = static_cast<std::size_t>(width + 1);
  for (int y = 0; y < height; ++y) {
    double row = 0.0;
    for (int x = 0; x < width; ++x) {
      row += map[static_cast<std::size_t>(y) * width + x];
      sat[(y + 1) * stride + (x + 1)] = sat[y * stride + (x + 1)] + row;
    }
  }
  std::vector<double> out;
  out.reserve(windows.size());
  for (const auto &r : windows) {
    if (!r.fits(height, width))
      throw ShapeError("window outside the map");
    out.push_back(sat[r.bottom() * stride + r.right()] - sat[r.top * stride + r.right()] -
                  sat[r.bottom() * stride + r.left] + sat[r.top * stride + r.left]);
  }
  return out;
}

DoaSearch doa_location_search(const EmbeddingModel &model, const LabeledImage &image, const Embedding &reference,
                              Direction direction, int window_size, int stride, int candidates, Rng &rng) {
  if (candidates < 1)
    throw ConfigError("DOA needs at least one candidate");
  check_target(model, reference);
  const int H = image.shape.height;
  const int W = image.shape.width;
  const int C = image.shape.channels;
  DoaSearch out;
  out.windows = grid_windows(H, W, window_size, stride);
  if (static_cast<std::size_t>(candidates) > out.windows.size()) {
    std::cerr << "warning: DOA candidate count " << candidates << " exceeds the " << out.windows.size()
              << "-window grid, clamped\n";
    candidates = static_cast<int>(out.windows.size());
  }
  const double sign = direction == Direction::ascend ? 1.0 : -1.0;
  const MatrixF ref = reference;
  const auto eval = squared_distance(model, to_column(image), ref, true);
  std::vector<double> magnitude(image.shape.plane(), 0.0);
  for (int c = 0; c < C; ++c)
    for (std::size_t p = 0; p < magnitude.size(); ++p)
      magnitude[p] += std::abs(static_cast<double>(eval.input_grad(static_cast<Eigen::Index>(c * magnitude.size() + p), 0)));
  out.window_scores = window_sums(magnitude, H, W, out.windows);

  std::vector<std::size_t> order(out.windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.window_scores[a] > out.window_scores[b]; });
  out.candidates.assign(order.begin(), order.begin() + candidates);

  // One noise patch shared by all candidates.
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> fill(static_cast<std::size_t>(C) * window_size * window_size);
  for (auto &v : fill)
    v = dist(rng);

  MatrixF batch(static_cast<Eigen::Index>(image.shape.size()), candidates);
  for (int k = 0; k < candidates; ++k) {
    LabeledImage painted = image;
    const Rect &r = out.windows[out.candidates[static_cast<std::size_t>(k)]];
    for (int c = 0; c < C; ++c)
      for (int dy = 0; dy < window_size; ++dy)
        for (int dx = 0; dx < window_size; ++dx)
          painted.at(c, r.top + dy, r.left + dx) = fill[(static_cast<std::size_t>(c) * window_size + dy) * window_size + dx];
    batch.col(k) = to_column(painted);
  }
  const MatrixF refs = ref.replicate(1, candidates);
  VectorD values(candidates);
  for (Eigen::Index b = 0; b < candidates; b += static_cast<Eigen::Index>(kChunk)) {
    const Eigen::Index m = std::min<Eigen::Index>(static_cast<Eigen::Index>(kChunk), candidates - b);
    values.segment(b, m) = squared_distance(model, batch.middleCols(b, m), refs.middleCols(b, m), false).values;
  }
  std::size_t best = 0;
  for (int k = 0; k < candidates; ++k) {
    const double loss = sign * values[k];
    out.candidate_losses.push_back(loss);
    const auto kk = static_cast<std::size_t>(k);
    if (k > 0 && (loss > out.candidate_losses[best] ||
                  (loss == out.candidate_losses[best] && out.candidates[kk] < out.candidates[best])))
      best = kk;
  }
  out.chosen = out.candidates[best];
  out.mask = Mask::rectangle(H, W, out.windows[out.chosen]);
  return out;
}

AttackResult random_noise_attack(const EmbeddingModel &model, const LabeledImage &start, const Mask &mask,
                                 const Embedding &target, int n_patterns, Rng &rng, std::vector<double> *all_distances) {
  if (n_patterns < 1)
    throw ConfigError("random noise attack needs at least one pattern");
  check_image(model, start, mask);
  check_target(model, target);
  const auto idx = mask.pixel_indices(start.shape.channels);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  const VectorF base = to_column(start);
  std::vector<float> best_values;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  if (all_distances)
    all_distances->clear();
  for (int b = 0; b < n_patterns; b += static_cast<int>(kChunk)) {
    const int m = std::min(static_cast<int>(kChunk), n_patterns - b);
    MatrixF batch = base.replicate(1, m);
    for (int i = 0; i < m; ++i)
      for (auto q : idx)
        batch(static_cast<Eigen::Index>(q), i) = dist(rng);
    const auto eval = squared_distance(model, batch, target.replicate(1, m), false);
    for (int i = 0; i < m; ++i) {
      const double d = std::sqrt(eval.values[i]);
      if (all_distances)
        all_distances->push_back(d);
      if (d < best) {
        best = d;
        best_values.resize(idx.size());
        for (std::size_t q = 0; q < idx.size(); ++q)
          best_values[q] = batch(static_cast<Eigen::Index>(idx[q]), i);
      }
      trace.push_back(best * best);
    }
  }
  LabeledImage adv = start;
  paste_values(adv, mask, best_values);
  AttackResult result = finish(model, start, std::move(adv), mask, target);
  result.objective_trace = std::move(trace);
  result.final_objective = best * best;
  result.iterations = n_patterns;
  return result;
}

LabeledImage global_uniform_noise(const LabeledImage &image, double magnitude, Rng &rng) {
  if (!(magnitude >= 0.0))
    throw ConfigError("noise magnitude must be >= 0");
  LabeledImage out = image;
  if (magnitude == 0.0)
    return out;
  out.latents.reset();
  std::uniform_real_distribution<double> dist(-magnitude, magnitude);
  for (auto &v : out.pixels)
    v = std::clamp(static_cast<float>(v + dist(rng)), 0.0f, 1.0f);
  return out;
}

nlohmann::json attack_record(const std::string &attack_type, const AttackResult &result, std::uint64_t seed,
                             int steps, std::optional<double> threshold, AttackMode mode) {
  const Mask &m = result.best_mask ? *result.best_mask : result.mask;
  nlohmann::json trace = nlohmann::json::object();
  if (!result.objective_trace.empty()) {
    trace["initial"] = result.objective_trace.front();
    trace["final"] = result.objective_trace.back();
    trace["min"] = *std::min_element(result.objective_trace.begin(), result.objective_trace.end());
    trace["length"] = result.objective_trace.size();
  }
  nlohmann::json success = nullptr;
  if (threshold) {
    // success = the detector outputs what the attacker wants
    success = mode == AttackMode::impersonate ? result.final_distance < *threshold : result.final_distance >= *threshold;
  }
  return nlohmann::json{{"attack_type", attack_type},
                        {"mask_descriptor", m.descriptor()},
                        {"seed", seed},
                        {"steps", steps},
                        {"final_distance", result.final_distance},
                        {"success_at_threshold", success},
                        {"trace_summary", trace}};
}

} // namespace rfv::adv
