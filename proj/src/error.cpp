#include "safetynet/error.hpp"

namespace safetynet {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Corruption: return "corruption error";
    case ErrorKind::Consistency: return "consistency error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Degenerate: return "degenerate-layer error";
    case ErrorKind::InsufficientNegatives: return "insufficient-negatives error";
    case ErrorKind::Io: return "io error";
  }
  return "error";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Domain:
    case ErrorKind::Shape:
      return 2;
    case ErrorKind::Numeric:
    case ErrorKind::Degenerate:
    case ErrorKind::InsufficientNegatives:
      return 4;
    default:
      return 3;
  }
}

}  // namespace safetynet
