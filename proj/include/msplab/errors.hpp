#pragma once

#include <stdexcept>
#include <string>

namespace msplab {

// Process exit codes used by the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitProperty = 5;

// Bad configuration values or invariant-violating settings.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or out-of-range data (files, labels, metric inputs).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required (NaN loss, etc.).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// A checked property failed (gradcheck suite).
class PropertyError : public std::runtime_error {
 public:
  explicit PropertyError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: broken preconditions inside the library.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Incompatible tensor shapes; message names both shapes.
class DimensionError : public ContractError {
 public:
  explicit DimensionError(const std::string& msg) : ContractError(msg) {}
};

}  // namespace msplab
