#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace neso {

enum class ErrorKind {
  InvalidSpec,
  Domain,
  InvalidOrder,
  Configuration,
  NumericalConditioning,
  Numerical,
  InvalidSystem,
  TrainingDiverged,
  KindMismatch,
  Io,
};

/// Short machine-parseable tag, e.g. "invalid-spec".
std::string_view error_tag(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  std::string_view tag() const noexcept { return error_tag(kind_); }

 private:
  ErrorKind kind_;
};

}  // namespace neso
