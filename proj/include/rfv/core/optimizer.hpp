#pragma once

#include "rfv/core/convnet.hpp"

namespace rfv {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Adam over every tensor of a ConvNet, followed by the unit-row projection of the
/// embedding layer.
class AdamOptimizer {
public:
  AdamOptimizer() = default;
  AdamOptimizer(const NetParameters<float> &like, AdamConfig cfg);

  void step(EmbeddingModel &model, const NetParameters<float> &grad);
  [[nodiscard]] long steps_taken() const { return t_; }
  [[nodiscard]] const AdamConfig &config() const { return cfg_; }

private:
  AdamConfig cfg_;
  NetParameters<float> m_, v_;
  long t_ = 0;
};

} // namespace rfv
