#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfv/adversary/geometry.hpp"
#include "rfv/core/convnet.hpp"
#include "rfv/core/mask.hpp"
#include "rfv/core/rng.hpp"

namespace rfv::adv {

enum class AttackMode { impersonate, evade };
enum class Parameterization { pgd_clip, tanh };
enum class Direction { ascend, descend };

struct AttackConfig {
  int steps = 10;
  /// PGD step size (pgd_clip) or Adam learning rate (tanh).
  double step_size = 16.0 / 255.0;
  int restarts = 1;
  double epsilon = 1.0;
  AttackMode mode = AttackMode::impersonate;
  Parameterization parameterization = Parameterization::pgd_clip;

  /// Training inner solver: 10 sign steps of 16/255 inside an epsilon = 1 box.
  static AttackConfig training_pgd();
  /// Feature adversary: 1000 Adam iterations at 0.01, 5 restarts.
  static AttackConfig feature_default();
  void validate() const;
};

void to_json(nlohmann::json &j, const AttackConfig &cfg);
void from_json(const nlohmann::json &j, AttackConfig &cfg);
std::string to_string(AttackMode mode);

struct AttackResult {
  std::vector<float> perturbation; // adversarial - original, full image layout
  LabeledImage adversarial_image;
  std::vector<double> objective_trace;
  Mask mask;
  std::optional<Mask> best_mask; // searched attacks only
  double final_distance = 0.0;   // ||F(adversarial) - target||
  double final_objective = 0.0;  // value of the minimized objective
  int iterations = 0;
};

// ---------------------------------------------------------------------------
// Batched building blocks

/// ||F(col) - ref||^2 per column and, if requested, its input gradient.
struct SquaredDistanceEval {
  VectorD values;
  MatrixF input_grad;
};
SquaredDistanceEval squared_distance(const EmbeddingModel &model, const MatrixF &images, const MatrixF &refs,
                                     bool need_grad);

/// Sign-gradient PGD over a batch: column i moves only inside masks[i], stays in [0,1] and in
/// the epsilon box around its starting value. Returns the final images.
MatrixF pgd_patch_batch(const EmbeddingModel &model, const MatrixF &images, std::span<const Mask> masks,
                        const MatrixF &refs, Direction direction, const AttackConfig &cfg,
                        VectorD *final_objective = nullptr);

/// One independent tanh-space feature-adversary problem.
struct TanhInstance {
  const LabeledImage *start = nullptr;
  Mask mask;
  Embedding target;
  /// Optional initial values of the masked pixels (Mask::pixel_indices order); defaults to `start`.
  std::vector<float> init;
};

struct TanhOutcome {
  std::vector<float> best_values; // masked pixel values of the best iterate
  double best_objective = 0.0;
  std::vector<double> trace; // running best objective, steps + 1 entries
};

/// Adam on w with masked pixels = (tanh(w) + 1) / 2, objective sign * ||F(x) - target||^2,
/// sign = +1 to impersonate and -1 to evade. Instances are solved together in chunks.
std::vector<TanhOutcome> run_tanh_adam(const EmbeddingModel &model, std::span<const TanhInstance> instances,
                                       int steps, double learning_rate, AttackMode mode);

/// Pixel value -> tanh-space variable, after squashing [0,1] into [1e-6, 1 - 1e-6].
double to_tanh_space(double pixel);
float from_tanh_space(double w);

// ---------------------------------------------------------------------------
// Attacks

/// Inner solver used in training. cfg.parameterization must be pgd_clip.
/// Restarts beyond the first start from uniform noise inside the mask and need `rng`.
AttackResult pgd_patch_step(const EmbeddingModel &model, const LabeledImage &image, const Mask &mask,
                            const Embedding &reference, Direction direction, const AttackConfig &cfg,
                            Rng *rng = nullptr);

/// Unconstrained masked feature adversary in tanh space; restart 0 starts from the image, later
/// restarts from uniform noise inside the mask. Returns the best restart (earliest on ties).
AttackResult feature_adversary(const EmbeddingModel &model, const LabeledImage &start, const Mask &mask,
                               const Embedding &target, const AttackConfig &cfg, Rng &rng);

/// One problem of a batched feature adversary.
struct FeatureProblem {
  const LabeledImage *start = nullptr;
  Mask mask;
  Embedding target;
};

/// feature_adversary over independent problems, solved together; noise restarts are drawn
/// problem by problem so a batch of one matches the single call.
std::vector<AttackResult> feature_adversary_batch(const EmbeddingModel &model, std::span<const FeatureProblem> problems,
                                                  const AttackConfig &cfg, Rng &rng);

struct SquareSearchConfig {
  int probe_steps = 20;
  double probe_learning_rate = 0.1;
  AttackConfig attack = AttackConfig::feature_default();
};

/// Probes every square_size window of the stride grid with a short run, keeps the window with
/// the lowest probe objective and reruns the full feature adversary there.
AttackResult square_patch_search(const EmbeddingModel &model, const LabeledImage &start, const Embedding &target,
                                 const MaskGeometry &geometry, const SquareSearchConfig &cfg, Rng &rng,
                                 std::vector<double> *probe_objectives = nullptr);

std::vector<AttackResult> square_patch_search_batch(const EmbeddingModel &model,
                                                    std::span<const LabeledImage *const> starts,
                                                    std::span<const Embedding> targets, const MaskGeometry &geometry,
                                                    const SquareSearchConfig &cfg, Rng &rng,
                                                    std::vector<std::vector<double>> *probe_objectives = nullptr);

/// One patch (shared w) pasted at a fixed mask, minimizing the mean objective over the intruders.
/// `perturbation` of the result holds the patch values (Mask::pixel_indices order) and
/// `adversarial_image` is the first intruder with the patch applied.
AttackResult universal_patch(const EmbeddingModel &model, std::span<const LabeledImage> intruders, const Mask &mask,
                             const Embedding &target, const AttackConfig &cfg, Rng &rng);

/// Mean objective of the universal patch at tanh variables `w` (one per masked value).
double universal_objective(const EmbeddingModel &model, std::span<const LabeledImage> intruders, const Mask &mask,
                           const Embedding &target, const std::vector<double> &w, AttackMode mode);

/// Single-image objective with the masked pixels set from tanh variables `w`.
double tanh_objective(const EmbeddingModel &model, const LabeledImage &start, const Mask &mask,
                      const Embedding &target, const std::vector<double> &w, AttackMode mode);

struct DoaSearch {
  Mask mask;
  std::vector<Rect> windows;
  std::vector<double> window_scores;     // integrated |gradient| per window
  std::vector<std::size_t> candidates;   // indices into windows, best first
  std::vector<double> candidate_losses;  // loss after in-painting each candidate
  std::size_t chosen = 0;                // index into windows
};

/// Gradient-guided location search: integrate sum_c |d loss / d pixel| over every window, keep
/// the top C, in-paint each with one shared uniform noise patch and return the window with the
/// highest loss. The loss is +||F - ref||^2 for ascend and -||F - ref||^2 for descend.
/// C is clamped to the grid size (with a warning).
DoaSearch doa_location_search(const EmbeddingModel &model, const LabeledImage &image, const Embedding &reference,
                              Direction direction, int window_size, int stride, int candidates, Rng &rng);

/// Sliding-window sums of a per-pixel map via a summed-area table.
std::vector<double> window_sums(const std::vector<double> &map, int height, int width, std::span<const Rect> windows);

/// Fills the mask with n_patterns uniform noise patterns and keeps the one closest to target.
AttackResult random_noise_attack(const EmbeddingModel &model, const LabeledImage &start, const Mask &mask,
                                 const Embedding &target, int n_patterns, Rng &rng,
                                 std::vector<double> *all_distances = nullptr);

/// Adds i.i.d. U(-magnitude, magnitude) noise to every pixel and clips to [0,1].
LabeledImage global_uniform_noise(const LabeledImage &image, double magnitude, Rng &rng);

/// Serializable record of one attack run.
nlohmann::json attack_record(const std::string &attack_type, const AttackResult &result, std::uint64_t seed,
                             int steps, std::optional<double> threshold, AttackMode mode = AttackMode::impersonate);

} // namespace rfv::adv
