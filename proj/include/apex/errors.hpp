#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace apex {

// Root of every error thrown by the library. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what, std::size_t line = 0)
      : Error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

// Query point too far from the centerline to project unambiguously.
class OutOfDomainError : public Error {
 public:
  using Error::Error;
};

// Lateral offset at or beyond the local radius of curvature.
class DegenerateOffsetError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int substep)
      : Error(what + " (substep " + std::to_string(substep) + ")"), substep_(substep) {}
  int substep() const noexcept { return substep_; }

 private:
  int substep_;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LogGapError : public Error {
 public:
  LogGapError(const std::string& what, double timestamp)
      : Error(what), timestamp_(timestamp) {}
  double timestamp() const noexcept { return timestamp_; }

 private:
  double timestamp_;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace apex
