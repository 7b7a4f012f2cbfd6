#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfv/adversary/attacks.hpp"
#include "rfv/augment/augment.hpp"
#include "rfv/core/checkpoint.hpp"
#include "rfv/core/optimizer.hpp"
#include "rfv/generator/generator.hpp"
#include "rfv/losses/losses.hpp"
#include "rfv/synthdata/dataset.hpp"

namespace rfv::train {

enum class Regime { proposed, weak_at, doa };
enum class EarlyStopMetric { val_loss, val_auroc };

std::string to_string(Regime regime);
Regime regime_from_string(const std::string &name);
std::string to_string(EarlyStopMetric metric);

struct TrainConfig {
  Regime regime = Regime::proposed;
  int batch_size = 128;
  int total_steps = 20000;
  AdamConfig optimizer;
  adv::AttackConfig attack = adv::AttackConfig::training_pgd();
  /// Off: the proposed regime keeps cutout but skips the PGD steps (no-AT ablation).
  bool adversarial_training = true;
  /// Leading optimizer steps that skip the PGD steps (masks and noise fill are kept).
  int clean_warmup_steps = 0;
  int mining_n = 2;
  int doa_candidates = 10;
  int validation_interval = 500;
  EarlyStopMetric early_stop_metric = EarlyStopMetric::val_auroc;
  loss::LossConfig loss;

  double mirror_probability = 0.5;
  int max_shift = 5;
  aug::CutoutSpec cutout;
  aug::MaskSampler weak_masks;
  /// Proposed regime: attack at a freshly sampled mask instead of the cutout rectangle.
  bool independent_adversarial_mask = false;

  int embedding_dim = 64;
  int conv_blocks = 4;
  std::uint64_t seed = 1;
  /// Genuine/impostor validation (and test) pairs built once per run.
  int validation_pairs = 256;
  /// Relative rise of validation loss over its running minimum that marks divergence.
  double divergence_ratio = 0.2;
  bool stop_on_divergence = false;

  void validate() const;
};

void to_json(nlohmann::json &j, const TrainConfig &cfg);
/// Rejects unknown keys.
void from_json(const nlohmann::json &j, TrainConfig &cfg);

struct RunRecord {
  long step = 0;
  double train_loss = 0.0; // mean batch loss since the previous record
  double val_loss = 0.0;   // real pairs, validation identities
  double test_loss = 0.0;  // real pairs, test identities
  double val_auroc = 0.0;
  bool diverged = false;
  double wall_seconds = 0.0;
};

struct RunLog {
  std::vector<RunRecord> records;

  [[nodiscard]] bool empty() const { return records.empty(); }
  /// Record index with the best metric (max AU-ROC or min loss), earliest on ties.
  [[nodiscard]] std::size_t best_index(EarlyStopMetric metric) const;
};

void write_runlog_csv(const RunLog &log, const std::filesystem::path &path, bool include_wall_time);
RunLog read_runlog_csv(const std::filesystem::path &path);

/// Per-step audit of gradient flow, used to check the stop-gradient contract.
struct StepAudit {
  long step = 0;
  double loss = 0.0;
  double max_abs_grad_y = 0.0;
  double max_abs_grad_u = 0.0;
  double generator_grad_norm = 0.0;
  int attacked_units = 0;
};

// ---------------------------------------------------------------------------
// Batches

/// Training batch. Columns of x, y, t, u are the clean units (after static augmentation);
/// x_adv / t_adv hold the augmented copies of the units listed in `attacked`.
struct Batch {
  Regime regime = Regime::proposed;
  MatrixF x, y, t, u;
  std::vector<int> id_x, id_y, id_t, id_u;
  std::vector<std::size_t> attacked;
  MatrixF x_adv, t_adv;
  std::vector<Mask> masks_x, masks_t; // one per attacked unit
  /// Unit uses y in place of u (real triples).
  bool u_is_y = false;
  [[nodiscard]] int size() const { return static_cast<int>(x.cols()); }
};

struct BatchSources {
  const synth::Dataset *dataset = nullptr;
  std::vector<int> identities;              // identities to draw from
  const gen::DisentangledGenerator *generator = nullptr; // proposed regime only
};

/// Picks the candidate negative: minimal ||F(t_i) - F(u_i)|| when `transferred` is given
/// (proposed regime), minimal ||F(t_i) - F(x)|| otherwise. Returns the index.
std::size_t mine_negative(const EmbeddingModel &model, const LabeledImage &x, std::span<const LabeledImage> candidates,
                          std::span<const LabeledImage> transferred = {});

/// Generator-aware form: in the proposed regime computes u_i = transfer(x, t_i) first.
std::size_t mine_negative(const EmbeddingModel &model, const gen::DisentangledGenerator *gen, const LabeledImage &x,
                          std::span<const LabeledImage> candidates, Regime regime, Rng &rng);

Batch assemble_batch(const TrainConfig &cfg, const BatchSources &sources, const EmbeddingModel &model, Rng &rng);

// ---------------------------------------------------------------------------
// Real-pair validation

/// Genuine pairs (x, y) of one identity and impostor pairs (t, y), t of another identity.
struct PairSet {
  MatrixF x, y, t;
};
PairSet make_pair_set(const synth::Dataset &dataset, const std::vector<int> &identities, int pairs, Rng &rng);

struct PairMetrics {
  double loss = 0.0;
  double auroc = 0.0;
};
/// Two-pair loss on real pairs (u = y) and AU-ROC of d(x,y) (genuine) vs d(t,y) (impostor).
PairMetrics evaluate_pairs(const EmbeddingModel &model, const PairSet &pairs, const loss::LossConfig &cfg);

// ---------------------------------------------------------------------------
// Training

struct TrainingAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
  std::optional<std::filesystem::path> diagnostic_checkpoint;
};

struct TrainOptions {
  std::optional<std::filesystem::path> run_dir; // checkpoints and runlog.csv when set
  bool include_wall_time = true;                // in the CSV
  std::optional<Checkpoint> initial;            // starting parameters instead of a fresh init
  std::function<void(const StepAudit &)> on_step;
  std::function<void(const RunRecord &)> on_record;
};

struct TrainOutcome {
  EmbeddingModel model;       // early-stopped
  EmbeddingModel final_model; // after the last step
  RunLog log;
  std::map<long, Checkpoint> checkpoints; // one per record
  long best_step = 0;
  bool diverged = false;
};

/// Runs cfg.total_steps optimizer updates (fewer when stopping on divergence). Throws
/// TrainingAborted on a non-finite loss, after writing a diagnostic checkpoint when a run
/// directory is given.
TrainOutcome train(const TrainConfig &cfg, const synth::Dataset &dataset, gen::DisentangledGenerator *generator,
                   const TrainOptions &options = {});

/// Checkpoint whose record has the best metric; only records with a checkpoint are eligible.
EmbeddingModel early_stop_select(const RunLog &log, const std::map<long, Checkpoint> &checkpoints,
                                 EarlyStopMetric metric);

} // namespace rfv::train
