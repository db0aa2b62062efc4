// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lofi {

// Shapes of matrices or batches do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Two parameter vectors do not share a layout.
class LayoutError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A configuration value is invalid. `what()` starts with the field path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(field), message_(message) {}

  const std::string& field() const noexcept { return field_; }
  const std::string& message() const noexcept { return message_; }

  // Same error with `prefix.` in front of the field path.
  ConfigError within(const std::string& prefix) const {
    return ConfigError(prefix.empty() ? field_ : prefix + "." + field_, message_);
  }

 private:
  std::string field_;
  std::string message_;
};

// NaN or Inf appeared where finite values are required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lofi
