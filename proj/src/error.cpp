#include "nerd/error.hpp"

namespace nerd {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument:
      return "invalid_argument";
    case ErrorCode::Shape:
      return "shape";
    case ErrorCode::Contract:
      return "contract";
    case ErrorCode::Io:
      return "io";
    case ErrorCode::Config:
      return "config";
    case ErrorCode::Generation:
      return "generation";
    case ErrorCode::Numeric:
      return "numeric";
    case ErrorCode::Internal:
      return "internal";
  }
  return "unknown";
}

}  // namespace nerd
