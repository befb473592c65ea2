// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace cmst {

/// Failure category. Each maps onto one C API status code and one CLI exit code.
enum class ErrorKind {
  config,
  data,
  training,
  io,
  shape,
  invalid_argument,
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& m) : Error(ErrorKind::config, m) {}
};

class DataError : public Error {
public:
  explicit DataError(const std::string& m) : Error(ErrorKind::data, m) {}
};

class TrainingError : public Error {
public:
  explicit TrainingError(const std::string& m) : Error(ErrorKind::training, m) {}
};

class IoError : public Error {
public:
  explicit IoError(const std::string& m) : Error(ErrorKind::io, m) {}
};

/// Dimension mismatch between a tensor and the layer or network consuming it.
class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& m) : Error(ErrorKind::shape, m) {}
};

class InvalidArgument : public Error {
public:
  explicit InvalidArgument(const std::string& m) : Error(ErrorKind::invalid_argument, m) {}
};

} // namespace cmst
