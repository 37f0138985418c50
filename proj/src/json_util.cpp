#include "mtadv/json_util.hpp"

namespace mtadv {

double parse_real(const nlohmann::json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    try {
      const auto slash = s.find('/');
      if (slash == std::string::npos) return std::stod(s);
      const double num = std::stod(s.substr(0, slash));
      const double den = std::stod(s.substr(slash + 1));
      if (den == 0.0) throw std::invalid_argument("zero denominator");
      return num / den;
    } catch (const std::exception&) {
      throw ConfigError(where + ": cannot parse '" + s + "' as a number");
    }
  }
  throw ConfigError(where + ": expected a number or a fraction string");
}

JsonReader::JsonReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
  if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
}

const nlohmann::json* JsonReader::child(const std::string& key) {
  seen_.insert(key);
  return j_.contains(key) ? &j_.at(key) : nullptr;
}

void JsonReader::finish() const {
  for (const auto& [key, value] : j_.items())
    if (!seen_.count(key)) throw ConfigError(where_ + "." + key + ": unknown key");
}

}  // namespace mtadv
