#pragma once

#include <initializer_list>
#include <string>

#include "json.hpp"
#include "nerd/error.hpp"

namespace nerd {

/// Throws ConfigError if `j` is not an object or carries a key outside `allowed`.
inline void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

/// Reads j[key] as V when present, keeping `fallback` otherwise; type errors
/// become ConfigError naming the key.
template <class V>
V get_or(const nlohmann::json& j, const char* key, const V& fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + ": key '" + std::string(key) + "' has the wrong type");
  }
}

inline nlohmann::json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
}

}  // namespace nerd
