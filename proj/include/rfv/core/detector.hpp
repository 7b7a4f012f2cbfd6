#pragma once

#include <vector>

#include "rfv/core/convnet.hpp"

namespace rfv {

/// Verification detector: rejects (1) when the candidate is at least `threshold` away from the
/// enrolled target in feature space.
struct Detector {
  const EmbeddingModel *model = nullptr;
  double threshold = 0.0;
  std::vector<Embedding> target_embeddings;

  void validate() const;
};

/// 1 iff feature_distance(F(candidate), F(target)) >= threshold.
int detect(const Detector &detector, const LabeledImage &candidate, const LabeledImage &target);

/// Same rule against the stored embeddings: 1 iff the smallest distance is >= threshold.
int detect(const Detector &detector, const LabeledImage &candidate);

} // namespace rfv
