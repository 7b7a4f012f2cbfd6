#pragma once

#include <filesystem>
#include <string>

#include "rfv/core/convnet.hpp"

namespace rfv {

inline constexpr const char *kCheckpointFormat = "rfv-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ArchitectureSpec architecture;
  NetParameters<float> parameters;
  long step = 0;
  std::string rng_state; // serialize_rng output, may be empty
};

Checkpoint make_checkpoint(const EmbeddingModel &model, long step, const std::string &rng_state);
EmbeddingModel model_from(const Checkpoint &checkpoint);

nlohmann::json to_json(const Checkpoint &checkpoint);
Checkpoint checkpoint_from_json(const nlohmann::json &j);

void save_checkpoint(const Checkpoint &checkpoint, const std::filesystem::path &path);
/// Throws ConfigError when the file is missing, has the wrong format tag or an unknown version.
Checkpoint load_checkpoint(const std::filesystem::path &path);

} // namespace rfv
