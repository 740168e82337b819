#pragma once

#include <stdexcept>
#include <string>

namespace lami {

/// Malformed input data: parse failures, invariant violations, unknown ids.
class DataError : public std::runtime_error {
 public:
  DataError(std::string kind, const std::string& message)
      : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

/// Training could not proceed: divergence, freeze violation.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or command-line usage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lami
