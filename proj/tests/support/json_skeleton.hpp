#pragma once

// Key skeleton of a JSON document: every path mapped to the set of JSON types
// seen there. Array elements collapse to "[]"; map-like objects whose keys are
// all digits collapse to "{n}". Free-form "extra" objects are opaque. Values
// are ignored, so the skeleton pins the report layout without pinning numbers.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <map>
#include <set>
#include <string>

namespace rgeom::testing {

inline void collect_skeleton(const nlohmann::json& j, const std::string& path,
                             std::map<std::string, std::set<std::string>>& out) {
  out[path].insert(j.type_name());
  if (path.size() >= 6 && path.compare(path.size() - 6, 6, "/extra") == 0) return;
  if (j.is_object()) {
    const bool numeric_keys = !j.empty() && std::all_of(j.items().begin(), j.items().end(), [](const auto& it) {
      const auto& k = it.key();
      return !k.empty() && std::all_of(k.begin(), k.end(), [](char c) { return c >= '0' && c <= '9'; });
    });
    for (const auto& [key, value] : j.items()) {
      collect_skeleton(value, path + "/" + (numeric_keys ? std::string("{n}") : key), out);
    }
  } else if (j.is_array()) {
    for (const auto& value : j) collect_skeleton(value, path + "/[]", out);
  }
}

inline nlohmann::json json_skeleton(const nlohmann::json& j) {
  std::map<std::string, std::set<std::string>> paths;
  collect_skeleton(j, "", paths);
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [path, types] : paths) {
    std::string joined;
    for (const auto& t : types) joined += (joined.empty() ? "" : "|") + t;
    out[path.empty() ? "/" : path] = joined;
  }
  return out;
}

}  // namespace rgeom::testing
