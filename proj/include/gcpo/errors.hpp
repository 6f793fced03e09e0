#pragma once

#include <stdexcept>
#include <string>

namespace gcpo {

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& m) : std::runtime_error(m) {}
};

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& m) : std::runtime_error(m) {}
};

struct LengthError : std::runtime_error {
  explicit LengthError(const std::string& m) : std::runtime_error(m) {}
};

struct ConditioningError : std::runtime_error {
  explicit ConditioningError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

struct SizeError : std::runtime_error {
  explicit SizeError(const std::string& m) : std::runtime_error(m) {}
};

struct StateError : std::runtime_error {
  explicit StateError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace gcpo
