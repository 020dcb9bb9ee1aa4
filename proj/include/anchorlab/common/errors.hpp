#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace anchorlab {

// Base of every error raised by the library. The CLI maps the concrete type
// onto its exit-code contract.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent configuration or mismatched tensor shapes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: wrong arguments, missing prerequisites, empty inputs.
class UsageError : public Error {
 public:
  using Error::Error;
};

class SimError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed binary file. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

// Raised by the gradient-check oracle when its own preconditions fail.
class OracleError : public Error {
 public:
  using Error::Error;
};

// Training diverged (NaN/Inf loss).
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::int64_t step, double lr)
      : Error(what), step_(step), lr_(lr) {}
  std::int64_t step() const noexcept { return step_; }
  double lr() const noexcept { return lr_; }

 private:
  std::int64_t step_;
  double lr_;
};

class OrchestrationError : public Error {
 public:
  using Error::Error;
};

}  // namespace anchorlab
