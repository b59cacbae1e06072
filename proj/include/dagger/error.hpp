// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_ERROR_HPP
#define DAGGER_ERROR_HPP

#include <stdexcept>
#include <string>

namespace dagger {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree with what an operation or layer expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed network or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, truncated or corrupt dataset / checkpoint files.
class DataError : public Error {
 public:
  using Error::Error;
};

/// The requested FLOPs budget cannot be met with at least one filter per layer.
class BudgetError : public Error {
 public:
  using Error::Error;
};

/// Training produced a NaN or infinite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dagger

#endif  // DAGGER_ERROR_HPP
