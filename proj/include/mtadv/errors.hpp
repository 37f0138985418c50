#pragma once

#include <stdexcept>
#include <string>

namespace mtadv {

/// Invalid or unreadable run configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A trained model missed its quality gate (CLI exit code 3).
class GateFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Attack failure carrying the identity of the sample it was running on.
class AttackError : public std::runtime_error {
 public:
  AttackError(std::string sample_id, const std::string& what)
      : std::runtime_error("sample " + sample_id + ": " + what), sample_id_(std::move(sample_id)) {}
  const std::string& sample_id() const { return sample_id_; }

 private:
  std::string sample_id_;
};

}  // namespace mtadv
