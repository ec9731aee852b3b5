#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gesturelab {

enum class ErrorCode {
  InvalidArgument,
  InvalidFrame,
  MissingMiddleFinger,
  DegenerateHand,
  MapSizeMismatch,
  GeometryError,
  LayoutMismatch,
  DimensionMismatch,
  DegenerateData,
  SingleClassData,
  NonConvergence,
  InsufficientData,
  ParseError,
  MissingFile,
  SchemaVersionMismatch,
  ConfigError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidFrame: return "InvalidFrame";
    case ErrorCode::MissingMiddleFinger: return "MissingMiddleFinger";
    case ErrorCode::DegenerateHand: return "DegenerateHand";
    case ErrorCode::MapSizeMismatch: return "MapSizeMismatch";
    case ErrorCode::GeometryError: return "GeometryError";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::SingleClassData: return "SingleClassData";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Broad failure class; the CLI maps these onto its exit codes.
enum class ErrorCategory { Config, Data, Numerical };

constexpr ErrorCategory category(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::ConfigError:
      return ErrorCategory::Config;
    case ErrorCode::NonConvergence:
    case ErrorCode::DegenerateData:
      return ErrorCategory::Numerical;
    default:
      return ErrorCategory::Data;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Wraps an error with context ("cell A+D+T K=5: ...") keeping its code.
inline Error with_context(const Error& e, const std::string& context) {
  std::string what = e.what();
  const auto prefix = std::string(to_string(e.code())) + ": ";
  if (what.rfind(prefix, 0) == 0) what.erase(0, prefix.size());
  return Error(e.code(), context + ": " + what);
}

}  // namespace gesturelab
