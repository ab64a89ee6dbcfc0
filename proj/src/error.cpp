#include "neso/error.hpp"

namespace neso {

std::string_view error_tag(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidSpec: return "invalid-spec";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::InvalidOrder: return "invalid-order";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::NumericalConditioning: return "numerical-conditioning";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::InvalidSystem: return "invalid-system";
    case ErrorKind::TrainingDiverged: return "training-diverged";
    case ErrorKind::KindMismatch: return "kind-mismatch";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(message), kind_(kind) {}

}  // namespace neso
