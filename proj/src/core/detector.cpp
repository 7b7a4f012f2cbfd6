#include "rfv/core/detector.hpp"

#include <limits>

namespace rfv {

void Detector::validate() const {
  if (!model)
    throw ConfigError("detector has no model");
  if (!(threshold >= 0.0))
    throw ConfigError("detector threshold must be >= 0");
}

int detect(const Detector &detector, const LabeledImage &candidate, const LabeledImage &target) {
  detector.validate();
  const double d = feature_distance(embed(*detector.model, candidate), embed(*detector.model, target));
  return d >= detector.threshold ? 1 : 0;
}

int detect(const Detector &detector, const LabeledImage &candidate) {
  detector.validate();
  if (detector.target_embeddings.empty())
    throw ConfigError("detector has no enrolled target");
  const Embedding e = embed(*detector.model, candidate);
  double best = std::numeric_limits<double>::infinity();
  for (const auto &t : detector.target_embeddings)
    best = std::min(best, feature_distance(e, t));
  return best >= detector.threshold ? 1 : 0;
}

} // namespace rfv
