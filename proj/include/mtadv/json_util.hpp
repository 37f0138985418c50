#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "mtadv/errors.hpp"

namespace mtadv {

/// Parses a real that may be written as a number or as a fraction string
/// such as "8/255".
double parse_real(const nlohmann::json& j, const std::string& where);

/// Reads fields of a JSON object, rejecting unknown keys on `finish()`.
class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string where);

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      if constexpr (std::is_same_v<T, double>)
        out = parse_real(j_.at(key), where_ + "." + key);
      else
        out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const nlohmann::json* child(const std::string& key);
  void finish() const;

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace mtadv
