#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gtc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// Input violates a documented precondition (shapes, ranges, norms).
class ValidationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "validation"; }
};

/// An index or rank argument is outside its admissible range.
class BoundsError : public ValidationError {
 public:
  using ValidationError::ValidationError;
  const char* kind() const noexcept override { return "bounds"; }
};

/// Iterative method hit its iteration cap; carries the last iterate.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_estimate, std::size_t iterations)
      : Error(what), last_estimate_(last_estimate), iterations_(iterations) {}

  const char* kind() const noexcept override { return "convergence"; }
  double last_estimate() const noexcept { return last_estimate_; }
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  double last_estimate_;
  std::size_t iterations_;
};

/// File could not be read/written or its content is malformed.
class IoError : public Error {
 public:
  IoError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  const char* kind() const noexcept override { return "io"; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace gtc
