// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ddpolab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents or parameter segments do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value fell outside an operation's domain (bad range, bad enum, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable files.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Bad user configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ddpolab
