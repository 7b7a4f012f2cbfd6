#include "rfv/core/optimizer.hpp"

#include <cmath>

namespace rfv {

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0))
    throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0,1)");
  if (!(epsilon > 0.0))
    throw ConfigError("Adam epsilon must be positive");
}

AdamOptimizer::AdamOptimizer(const NetParameters<float> &like, AdamConfig cfg)
    : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {
  cfg_.validate();
}

void AdamOptimizer::step(EmbeddingModel &model, const NetParameters<float> &grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(cfg_.beta1);
  const auto b2 = static_cast<float>(cfg_.beta2);
  const auto lr = static_cast<float>(cfg_.learning_rate);
  const auto eps = static_cast<float>(cfg_.epsilon);
  const auto inv_c1 = static_cast<float>(1.0 / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);

  std::vector<float *> ws, ms, vs;
  std::vector<const float *> gs;
  std::vector<std::size_t> ns;
  model.parameters().for_each_tensor([&](float *p, std::size_t n) {
    ws.push_back(p);
    ns.push_back(n);
  });
  m_.for_each_tensor([&](float *p, std::size_t) { ms.push_back(p); });
  v_.for_each_tensor([&](float *p, std::size_t) { vs.push_back(p); });
  grad.for_each_tensor([&](const float *p, std::size_t) { gs.push_back(p); });
  if (ms.size() != ws.size() || gs.size() != ws.size())
    throw ShapeError("optimizer state does not match the model");
  for (std::size_t k = 0; k < ws.size(); ++k)
    for (std::size_t i = 0; i < ns[k]; ++i) {
      const float g = gs[k][i];
      ms[k][i] = b1 * ms[k][i] + (1.0f - b1) * g;
      vs[k][i] = b2 * vs[k][i] + (1.0f - b2) * g * g;
      ws[k][i] -= lr * (ms[k][i] * inv_c1) / (std::sqrt(vs[k][i] * inv_c2) + eps);
    }
  model.normalize_embedding_rows();
}

} // namespace rfv
