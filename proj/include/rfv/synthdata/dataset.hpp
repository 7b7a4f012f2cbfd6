#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rfv/core/image.hpp"
#include "rfv/core/rng.hpp"
#include "rfv/synthdata/renderer.hpp"

namespace rfv::synth {

/// Identity sets of one dataset. The three sets are pairwise disjoint.
struct DatasetSplit {
  std::vector<int> train_identities;
  std::vector<int> validation_identities;
  std::vector<int> test_identities;
  int samples_per_identity = 0;

  [[nodiscard]] bool disjoint() const;
  [[nodiscard]] std::size_t identity_count() const {
    return train_identities.size() + validation_identities.size() + test_identities.size();
  }
};

struct SyntheticDatasetConfig {
  SyntheticFactorSpec factors = SyntheticFactorSpec::standard();
  int train_identities = 60;
  int validation_identities = 20;
  int test_identities = 20;
  int samples_per_identity = 12;
  std::uint64_t seed = 1;
};

/// Identity-labeled images plus the split over identities.
class Dataset {
public:
  Dataset() = default;
  Dataset(ImageShape shape, std::vector<LabeledImage> images, std::vector<std::string> identity_names,
          DatasetSplit split);

  static Dataset synthetic(const SyntheticDatasetConfig &config);

  [[nodiscard]] const ImageShape &shape() const { return shape_; }
  [[nodiscard]] const std::vector<LabeledImage> &images() const { return images_; }
  [[nodiscard]] const LabeledImage &image(std::size_t i) const { return images_.at(i); }
  [[nodiscard]] std::size_t size() const { return images_.size(); }
  [[nodiscard]] const DatasetSplit &split() const { return split_; }
  [[nodiscard]] std::size_t identity_count() const { return by_identity_.size(); }
  [[nodiscard]] const std::vector<std::size_t> &samples_of(int identity) const { return by_identity_.at(identity); }
  [[nodiscard]] const std::vector<std::string> &identity_names() const { return names_; }
  [[nodiscard]] bool has_latents() const;

  /// Factor spec of synthetic datasets; empty for ingested folders.
  std::optional<SyntheticFactorSpec> factors;
  /// Source file per image for ingested datasets.
  std::vector<std::string> sources;

private:
  ImageShape shape_;
  std::vector<LabeledImage> images_;
  std::vector<std::string> names_;
  std::vector<std::vector<std::size_t>> by_identity_;
  DatasetSplit split_;
};

/// Draws (x, t): a class c_x uniformly from `identities`, then x uniformly within c_x, then a
/// different class c_t uniformly and t uniformly within it. Returns image indices.
/// Throws ConfigError with fewer than two identities.
std::pair<std::size_t, std::size_t> sample_pair(const Dataset &dataset, const std::vector<int> &identities, Rng &rng);

/// Uniform sample of identity `c` other than `exclude` (pass SIZE_MAX to allow any).
std::size_t sample_within(const Dataset &dataset, int identity, Rng &rng, std::size_t exclude = SIZE_MAX);

struct IngestOptions {
  ImageShape shape{64, 64, 3};
  double train_fraction = 0.6;
  double validation_fraction = 0.2;
};

/// Loads `<root>/<identity>/<images>`. Identities are indexed in sorted name order; unreadable
/// files are skipped and identities with fewer than two images are dropped (both with a warning
/// on stderr). Splits are assigned in index order by the given fractions.
Dataset ingest_folder(const std::filesystem::path &root, const IngestOptions &options = {});

/// JSON index: identity -> files, split assignment and a hash of the generating spec.
nlohmann::json manifest(const Dataset &dataset, const nlohmann::json &spec);

} // namespace rfv::synth
