// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gradflow {

enum class ErrorCode {
  UnboundName,
  DomainError,
  SyntaxError,
  ValidationFailed,
  ShapeMismatch,
  OutOfBounds,
  NonTermination,
  MissingTapeValue,
  UnresolvableTripCount,
  DependentUnreachable,
  UnsupportedLoop,
  NoFixpoint,
  MissingInverse,
  IrrecomputableValue,
  PathExplosion,
  Infeasible,
  NegativeResident,
  IOError,
  InvalidArgument,
  Internal,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct Diagnostic {
  enum class Severity { Error, Warning };
  Severity severity = Severity::Error;
  std::string rule;
  std::string id;
  std::string message;
};

std::string format_diagnostic(const Diagnostic& d);

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Diagnostic> diagnostics);
  const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::vector<Diagnostic> diagnostics_;
};

class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t position, const std::string& message)
      : Error(ErrorCode::SyntaxError, "at " + std::to_string(position) + ": " + message),
        position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class InfeasibleError : public Error {
 public:
  InfeasibleError(std::int64_t min_peak_bytes, std::int64_t limit_bytes);
  std::int64_t min_peak_bytes() const noexcept { return min_peak_; }
  std::int64_t limit_bytes() const noexcept { return limit_; }

 private:
  std::int64_t min_peak_;
  std::int64_t limit_;
};

}  // namespace gradflow
