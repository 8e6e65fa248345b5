#pragma once

#include <stdexcept>
#include <string>

namespace shapeopt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched lengths or dimensions between arguments.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range or otherwise invalid scalar parameters.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A mesh violates one of its structural invariants.
class MeshError : public Error {
 public:
  using Error::Error;
};

/// Problems in an input document. Carries the 1-based line, 0 if unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_ = 0;
};

class UnsupportedVersionError : public ParseError {
 public:
  using ParseError::ParseError;
};

class UnsupportedElementError : public ParseError {
 public:
  using ParseError::ParseError;
};

class IntegrityError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// Inconsistent problem/control/metric configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A linear solve failed or missed the residual contract.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual)
      : Error(what + " (relative residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Gram assembly produced non-finite entries or could not be factorized.
class MetricError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace shapeopt
