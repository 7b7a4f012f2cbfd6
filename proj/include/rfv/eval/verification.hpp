#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfv/adversary/attacks.hpp"
#include "rfv/core/detector.hpp"
#include "rfv/eval/metrics.hpp"
#include "rfv/generator/generator.hpp"
#include "rfv/synthdata/dataset.hpp"

namespace rfv::eval {

/// Test-time augmentations: mirror averages the distances of the candidate and its flip,
/// select enrolls the medoid of the target set.
struct Tta {
  bool mirror = false;
  bool select = false;

  [[nodiscard]] std::string name() const; // none, mirror, select, both
  static Tta parse(const std::string &name);
  bool operator==(const Tta &) const = default;
};

/// Index of the target-set image minimizing the mean unsquared feature distance to the
/// others (lowest index on ties).
std::size_t medoid(const EmbeddingModel &model, std::span<const LabeledImage> target_set);

struct Enrollment {
  std::size_t chosen = 0; // index into the target set
  Embedding embedding;
  std::optional<Embedding> mirrored; // embedding of the flipped target, when stored
};

/// Chosen target: the medoid when `select`, otherwise the first image.
Enrollment enroll(const EmbeddingModel &model, std::span<const LabeledImage> target_set, bool select,
                  bool store_mirrored = false);

/// Mean feature distance between the candidate views (itself, plus its flip with `mirror`) and
/// the stored target embeddings. Higher means more likely a different identity.
double score_enrolled(const EmbeddingModel &model, const LabeledImage &candidate, const Enrollment &target,
                      bool mirror);

double score(const Detector &detector, const LabeledImage &candidate, std::span<const LabeledImage> target_set,
             const Tta &tta);

// ---------------------------------------------------------------------------
// Trials

struct VerificationTrial {
  int target_identity = -1;
  std::vector<std::size_t> target_set; // dataset indices
  std::size_t candidate = 0;           // dataset index
  int label = 0;                       // 0 same identity, 1 different
  std::string attack = "clean";
};

struct TargetPlan {
  int identity = -1;
  std::vector<std::size_t> target_set;      // every sample of the identity
  std::vector<std::size_t> intruders;       // impostor candidates, other identities
  std::vector<std::size_t> patch_intruders; // universal-patch training set, disjoint from intruders
};

struct PlanConfig {
  int targets = 10;
  int intruders_per_target = 20;
  int patch_intruders = 100;
  int min_target_samples = 10;
};

struct TrialPlan {
  std::vector<TargetPlan> targets;
};

/// Targets are drawn from `identities` among those with at least min_target_samples images;
/// intruders come from the remaining identities of the same list.
TrialPlan make_trial_plan(const synth::Dataset &dataset, const std::vector<int> &identities, const PlanConfig &cfg,
                          Rng &rng);

/// Genuine trials (target set minus the enrolled image) and clean intruder trials.
std::vector<VerificationTrial> clean_trials(const TrialPlan &plan, const std::vector<std::size_t> &chosen);

// ---------------------------------------------------------------------------
// Attacks

/// Attack descriptors: eyeglasses, square_patch, eye_patch, random_noise, global_noise,
/// indirect_anchor, distal; eyeglasses, square_patch and indirect_anchor accept an
/// ":evade" suffix.
struct AttackSpec {
  std::string descriptor;
  std::string type;
  adv::AttackMode mode = adv::AttackMode::impersonate;
  adv::AttackConfig feature = adv::AttackConfig::feature_default();
  adv::SquareSearchConfig square;
  adv::AttackConfig universal = universal_default();
  adv::AttackConfig distal = distal_default();
  int noise_patterns = 1000;
  double noise_magnitude = 10.0 / 255.0;
  int distal_starts = 1; // noise starts per target

  static adv::AttackConfig universal_default(); // 5000 iterations at 0.005
  static adv::AttackConfig distal_default();    // 2000 iterations at 0.01, one start
  void validate() const;
};

/// Parses a descriptor and applies per-attack option overrides (keys: steps, step_size,
/// restarts, probe_steps, probe_learning_rate, patterns, magnitude, starts). Unknown keys are rejected.
AttackSpec parse_attack(const std::string &descriptor, const nlohmann::json &options = nlohmann::json::object());

bool is_known_attack(const std::string &descriptor);

/// One attacked candidate. The adversarial image is rebuilt from the dataset image by pasting
/// `values` at `mask` (or, for full-image attacks, replacing every pixel).
struct AttackOutcome {
  std::string attack;
  int target_identity = -1;
  std::size_t target_image = 0; // dataset index of the enrolled target
  std::size_t candidate = 0;    // dataset index of the starting image (ignored for distal)
  int label = 1;                // ground truth: 0 genuine (evasion), 1 intruder
  Mask mask;
  std::vector<float> values;
  double final_distance = 0.0;
  std::vector<double> objective_trace;
  nlohmann::json record;
};

nlohmann::json to_json(const AttackOutcome &outcome);
AttackOutcome outcome_from_json(const nlohmann::json &j);

/// Adversarial image of an outcome.
LabeledImage rebuild(const synth::Dataset &dataset, const AttackOutcome &outcome);

/// Per (target image, candidate) pair keeps whichever outcome ends closer to the real target
/// (farther for evasion). Both lists must cover the same pairs.
std::vector<AttackOutcome> best_of(const EmbeddingModel &model, const synth::Dataset &dataset,
                                   std::span<const AttackOutcome> a, std::span<const AttackOutcome> b,
                                   const std::string &name);

struct SuiteContext {
  const synth::Dataset *dataset = nullptr;
  const gen::DisentangledGenerator *generator = nullptr; // indirect_anchor only
  adv::MaskGeometry geometry;
  std::uint64_t seed = 1;
  int jobs = 1;
  bool store_mirrored_target = false;
};

/// Runs one attack for every target of the plan against the enrolled image `chosen[k]` of
/// target k. Impersonation attacks every intruder; evasion attacks every genuine candidate.
/// Per-target RNG streams make the result independent of `jobs`.
std::vector<AttackOutcome> run_attack(const EmbeddingModel &model, const SuiteContext &ctx, const TrialPlan &plan,
                                      const std::vector<std::size_t> &chosen, const AttackSpec &spec);

// ---------------------------------------------------------------------------
// Reports

struct MetricRow {
  std::string attack;
  std::string tta;
  double au_roc = 0.0;
  double au_pr = 0.0;
  std::optional<double> detection_rate;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::vector<double> scores; // for curves; not serialized
  std::vector<int> labels;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::map<std::string, double> thresholds; // per TTA, calibrated on genuine scores
  double fpr = 0.05;

  [[nodiscard]] const MetricRow &row(const std::string &attack, const std::string &tta) const;
};

nlohmann::json to_json(const MetricReport &report);
/// Columns: attack, tta, au_roc, au_pr, detection_rate (empty when not applicable).
std::string to_csv(const MetricReport &report);

struct ScoreOptions {
  std::vector<Tta> ttas{Tta{}};
  double fpr = 0.05;
  /// Genuine scores for threshold calibration per TTA name; defaults to the plan's own
  /// clean genuine scores.
  std::map<std::string, std::vector<double>> calibration;
  /// Evasion detection rates use one threshold per target, calibrated on that target's own
  /// genuine scores, instead of the global threshold.
  bool per_target_calibration = false;
};

/// Scores clean trials and every attack's outcomes under each TTA. Outcomes whose target
/// image differs from the TTA's enrolled image are skipped. Impersonation rows compare
/// genuine candidates (0) with attacked intruders (1); evasion rows compare attacked genuine
/// candidates (0) with clean intruders (1) and add the detection rate at the calibrated threshold.
MetricReport score_suite(const EmbeddingModel &model, const SuiteContext &ctx, const TrialPlan &plan,
                         const std::map<std::string, std::vector<AttackOutcome>> &outcomes,
                         const ScoreOptions &options);

/// Clean genuine scores of a plan under one TTA (for calibration on a separate split).
std::vector<double> genuine_scores(const EmbeddingModel &model, const synth::Dataset &dataset, const TrialPlan &plan,
                                   const Tta &tta);

/// run_attack for every spec against the enrolled images of each requested TTA (targets whose
/// enrolled image is shared between TTAs are attacked once). Keys are the descriptors.
std::map<std::string, std::vector<AttackOutcome>> run_attacks(const EmbeddingModel &model, const SuiteContext &ctx,
                                                               const TrialPlan &plan,
                                                               std::span<const AttackSpec> attacks,
                                                               std::span<const Tta> ttas);

/// run_attacks, then score_suite.
MetricReport evaluate_suite(const Detector &detector, const SuiteContext &ctx, const TrialPlan &plan,
                            std::span<const AttackSpec> attacks, const ScoreOptions &options,
                            std::map<std::string, std::vector<AttackOutcome>> *outcomes_out = nullptr);

/// Enrolled image (dataset index) of every target under a TTA.
std::vector<std::size_t> enrolled_images(const EmbeddingModel &model, const synth::Dataset &dataset,
                                         const TrialPlan &plan, bool select);

} // namespace rfv::eval
