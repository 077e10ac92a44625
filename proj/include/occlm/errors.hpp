// Copyright 2026 The occlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace occlm {

/// Base class for every error the toolkit raises. The CLI maps any
/// `Error` to exit code 1; usage problems never reach this type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or an empty tensor where one is required.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Token or element index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A kernel produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Violated API precondition, e.g. backward() on a non-scalar root.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing, empty or degenerate input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed UTF-8.
class EncodingError : public Error {
 public:
  using Error::Error;
};

/// Sequence longer than the model context.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint unreadable, or mismatched against the expected config/vocab.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace occlm
