#pragma once

#include <stdexcept>
#include <string>

namespace spatioformer {

enum class ErrorCategory { config, data, numeric };

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config error";
    case ErrorCategory::data: return "data error";
    case ErrorCategory::numeric: return "numeric failure";
  }
  return "error";
}

// Base for every error the library raises. The category drives the CLI exit
// status and diagnostic prefix.
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

// Raised for incompatible tensor extents.
class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace spatioformer
