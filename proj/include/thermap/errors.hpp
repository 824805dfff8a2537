#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace thermap {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition of an operation was violated by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class InvalidDepthError : public Error {
 public:
  using Error::Error;
};

class BehindCameraError : public Error {
 public:
  using Error::Error;
};

/// Too few or rank-deficient correspondences for an alignment / fit.
class DegenerateConfigurationError : public Error {
 public:
  using Error::Error;
};

class InsufficientOverlapError : public Error {
 public:
  using Error::Error;
};

/// An oracle has no prediction for the requested frame or edge.
class OracleUnavailableError : public Error {
 public:
  using Error::Error;
};

class StepFailedError : public Error {
 public:
  using Error::Error;
};

class TrackingFailure : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed input. `position` is a byte offset for binary formats and a
/// 1-based line number for line-oriented text formats.
class ParseError : public Error {
 public:
  enum class Unit { kByte, kLine };

  ParseError(const std::string& source, Unit unit, std::size_t position,
             const std::string& what)
      : Error(source + (unit == Unit::kByte ? ": byte " : ": line ") +
              std::to_string(position) + ": " + what),
        unit_(unit),
        position_(position) {}

  Unit unit() const { return unit_; }
  std::size_t position() const { return position_; }

 private:
  Unit unit_;
  std::size_t position_;
};

}  // namespace thermap
