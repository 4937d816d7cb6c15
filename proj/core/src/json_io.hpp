#pragma once

// JSON conversions shared by the manifest and config code.
// Kept private so installed headers do not depend on nlohmann/json.

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "emasam/error.hpp"
#include "emasam/eval.hpp"
#include "emasam/synth.hpp"
#include "emasam/toy_model.hpp"
#include "emasam/toy_train.hpp"

namespace emasam::detail {

using nlohmann::json;

/// Throws ConfigError naming `where.key` when `j` has keys outside `allowed`.
void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where);

/// Reads `j[key]` into `out` when present; wraps type errors as ConfigError.
template <class T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

json to_json(const SceneSpec& s);
SceneSpec scene_from_json(const json& j, const std::string& where);

json to_json(const DatasetSpec& d);
DatasetSpec dataset_from_json(const json& j, const std::string& where);

json to_json(const OcclusionEvent& e);
OcclusionEvent event_from_json(const json& j, const std::string& where);

json to_json(const ToyConfig& c);
ToyConfig toy_config_from_json(const json& j, const std::string& where);

json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j, const std::string& where);

json to_json(const StabilityConfig& c);
StabilityConfig stability_from_json(const json& j, const std::string& where);

json to_json(const RunOptions& o);
RunOptions run_options_from_json(const json& j, const std::string& where);

}  // namespace emasam::detail
