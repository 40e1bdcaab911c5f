#pragma once

// Internal JSON helpers shared by the file formats. Not installed.

#include <string>

#include "json.hpp"
#include "tak/errors.hpp"
#include "tak/network.hpp"

namespace tak::detail {

using nlohmann::json;

json spec_to_json(const NetSpec& spec);
NetSpec spec_from_json(const json& j);
json layout_to_json(const ParamLayout& layout);

/// Parses a container manifest, mapping JSON errors onto FormatError.
json parse_manifest(const std::string& text);

/// Reads j[key] as T, throwing FormatError naming the key on failure.
template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("manifest missing '") + key + "'", 0);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest field '") + key + "': " + e.what(), 0);
  }
}

}  // namespace tak::detail
