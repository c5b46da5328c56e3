#pragma once

#include <stdexcept>
#include <string>

namespace nerd {

/// Error categories surfaced through the C API as status codes.
enum class ErrorCode {
  InvalidArgument = 1,
  Shape = 2,
  Contract = 3,
  Io = 4,
  Config = 5,
  Generation = 6,
  Numeric = 7,
  Internal = 8,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& w) : Error(ErrorCode::InvalidArgument, w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorCode::Shape, w) {}
};
struct ContractViolation : Error {
  explicit ContractViolation(const std::string& w) : Error(ErrorCode::Contract, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCode::Io, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCode::Config, w) {}
};
struct GenerationError : Error {
  explicit GenerationError(const std::string& w) : Error(ErrorCode::Generation, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorCode::Numeric, w) {}
};

}  // namespace nerd
