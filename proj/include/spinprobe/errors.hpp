// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spinprobe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Physically invalid input (negative time, rho outside [0,1], defect on top of the probe...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Documented size bound exceeded (2^N enumeration, defects per candidate).
class CapacityError : public Error {
 public:
  using Error::Error;
};

class FitQualityError : public Error {
 public:
  using Error::Error;
};

class NumericalInstabilityError : public Error {
 public:
  using Error::Error;
};

class SequenceError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Configuration or parameter validation failure; raised before any compute starts.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace spinprobe
