#pragma once

#include <stdexcept>
#include <string>

namespace doconv {

// Shape/metadata inconsistencies (element count mismatch, wrong rank, ...).
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid layer geometry (divisibility, empty output grid, ...).
struct GeometryError : std::runtime_error {
  explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

// Valid data, but a configuration this operation does not model.
struct UnsupportedError : std::runtime_error {
  explicit UnsupportedError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// File format / filesystem failures.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad CLI config file contents.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace doconv
