#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "agl/error.hpp"

namespace agl {

// Throws ConfigError naming the first key of `j` not listed in `known`.
inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                                std::string_view section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected a JSON object");
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown key '" + key + "' in " + std::string(section));
}

// Runs `parse`, converting JSON type errors into ConfigError.
template <typename F>
auto parse_section(std::string_view section, F&& parse) {
  try {
    return parse();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(section) + ": " + e.what());
  }
}

}  // namespace agl
