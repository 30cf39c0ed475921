#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "vqunet/classifier.hpp"
#include "vqunet/model.hpp"

namespace vqunet {

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Throws ConfigError if `j` is not an object or has a key outside `allowed`.
void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                        std::string_view where);

/// Overwrites `field` with `j[key]` when present; type errors become ConfigError.
template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& field, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

nlohmann::json to_json(const VQUNetConfig& config);
VQUNetConfig vqunet_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ClassifierConfig& config);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);

}  // namespace vqunet
