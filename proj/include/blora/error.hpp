// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace blora {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatch between operands.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Invalid argument value (out of range, wrong sign, inconsistent config).
class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& msg) : Error(msg) {}
};

// Matrix factorization failure. Carries the first failing pivot index.
class DecompositionError : public Error {
 public:
  DecompositionError(const std::string& msg, int pivot)
      : Error(msg + " (pivot " + std::to_string(pivot) + ")"), pivot_(pivot) {}
  int pivot() const { return pivot_; }

 private:
  int pivot_;
};

// Non-finite value produced where a finite one is required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// API misuse (wrong tape, missing parameter, double backward).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

// File format or I/O failure.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace blora
