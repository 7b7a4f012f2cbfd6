#include "rfv/core/checkpoint.hpp"

#include <fstream>

namespace rfv {

Checkpoint make_checkpoint(const EmbeddingModel &model, long step, const std::string &rng_state) {
  return Checkpoint{model.architecture(), model.parameters(), step, rng_state};
}

EmbeddingModel model_from(const Checkpoint &checkpoint) {
  return EmbeddingModel(checkpoint.architecture, checkpoint.parameters);
}

nlohmann::json to_json(const Checkpoint &checkpoint) {
  nlohmann::json tensors = nlohmann::json::array();
  checkpoint.parameters.for_each_tensor([&](const float *data, std::size_t n) {
    tensors.push_back(std::vector<float>(data, data + n));
  });
  return nlohmann::json{{"format", kCheckpointFormat},
                        {"version", kCheckpointVersion},
                        {"architecture", checkpoint.architecture},
                        {"step", checkpoint.step},
                        {"rng_state", checkpoint.rng_state},
                        {"parameters", tensors}};
}

Checkpoint checkpoint_from_json(const nlohmann::json &j) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
    throw ConfigError("not a checkpoint file");
  const int version = j.value("version", -1);
  if (version != kCheckpointVersion)
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.architecture = j.at("architecture").get<ArchitectureSpec>();
  c.step = j.at("step").get<long>();
  c.rng_state = j.value("rng_state", "");
  // Shapes come from a freshly built model; values from the file.
  c.parameters = EmbeddingModel(c.architecture, 0).parameters();
  const auto &tensors = j.at("parameters");
  std::size_t k = 0;
  c.parameters.for_each_tensor([&](float *data, std::size_t n) {
    if (k >= tensors.size())
      throw ConfigError("checkpoint has too few parameter tensors");
    const auto values = tensors[k++].get<std::vector<float>>();
    if (values.size() != n)
      throw ConfigError("checkpoint tensor " + std::to_string(k - 1) + " has the wrong size");
    std::copy(values.begin(), values.end(), data);
  });
  if (k != tensors.size())
    throw ConfigError("checkpoint has too many parameter tensors");
  return c;
}

void save_checkpoint(const Checkpoint &checkpoint, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out)
    throw ConfigError("cannot write checkpoint " + path.string());
  out << to_json(checkpoint).dump();
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

} // namespace rfv
