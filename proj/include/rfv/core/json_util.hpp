#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "rfv/core/image.hpp"

namespace rfv {

/// Throws ConfigError naming the first key of `j` that is not in `known`.
inline void reject_unknown_keys(const nlohmann::json &j, std::initializer_list<const char *> known,
                                const std::string &section) {
  if (!j.is_object())
    throw ConfigError("section '" + section + "' must be an object");
  for (const auto &[key, _] : j.items())
    if (std::none_of(known.begin(), known.end(), [&](const char *k) { return key == k; }))
      throw ConfigError("unknown key '" + key + "' in section '" + section + "'");
}

} // namespace rfv
