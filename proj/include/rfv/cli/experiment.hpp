#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfv/adversary/geometry.hpp"
#include "rfv/eval/verification.hpp"
#include "rfv/generator/generator.hpp"
#include "rfv/synthdata/dataset.hpp"
#include "rfv/trainer/trainer.hpp"

namespace rfv::cli {

struct DatasetSection {
  /// Exactly one of the two is set.
  std::optional<synth::SyntheticDatasetConfig> synthetic;
  std::optional<std::filesystem::path> ingest_path;
  synth::IngestOptions ingest;
};

struct GeneratorSection {
  std::string kind = "toy";
  nlohmann::json options = nlohmann::json{{"background_noise", 0.05}};
};

struct AttackEntry {
  std::string descriptor;
  nlohmann::json options = nlohmann::json::object();
};

struct EvalSection {
  std::vector<eval::Tta> tta{eval::Tta{}};
  double fpr = 0.05;
  eval::PlanConfig plan;
  bool store_mirrored_target = false;
  bool per_target_calibration = false;
  std::uint64_t seed = 1;
  /// Mask sizes; defaults to the 64x64 geometry rescaled to the image size.
  std::optional<adv::MaskGeometry> geometry;
};

struct ExperimentConfig {
  DatasetSection dataset;
  GeneratorSection generator;
  train::TrainConfig train;
  std::vector<AttackEntry> attacks;
  EvalSection eval;
  std::filesystem::path output_dir = "runs/default";

  /// Checks every section and that referenced paths exist.
  void validate() const;
  [[nodiscard]] adv::MaskGeometry geometry(const ImageShape &shape) const;
  [[nodiscard]] std::vector<eval::AttackSpec> attack_specs() const;
};

nlohmann::json to_json(const ExperimentConfig &cfg);
/// Rejects unknown keys in every section. Relative paths are resolved against `base`.
ExperimentConfig experiment_from_json(const nlohmann::json &j, const std::filesystem::path &base = {});
ExperimentConfig load_experiment(const std::filesystem::path &path);

synth::Dataset build_dataset(const ExperimentConfig &cfg);
std::unique_ptr<gen::DisentangledGenerator> build_generator(const ExperimentConfig &cfg, const synth::Dataset &dataset);

/// Trial plan over the test (or validation) identities, seeded from eval.seed.
eval::TrialPlan build_plan(const ExperimentConfig &cfg, const synth::Dataset &dataset, bool validation = false);

/// Writes every image as <root>/<identity>/<index>.png and <root>/manifest.json.
void export_dataset(const synth::Dataset &dataset, const std::filesystem::path &root, const nlohmann::json &spec);

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitAborted = 3;

/// Entry point of the command-line tool; returns the process exit code.
int run(int argc, const char *const *argv);

} // namespace rfv::cli
