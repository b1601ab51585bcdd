#ifndef PEST_ERROR_HPP_
#define PEST_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace pest {

enum class ErrorCode {
  ZeroNorm,
  DimMismatch,
  ShapeMismatch,
  BadLabel,
  NonPositiveTemperature,
  StepOutOfRange,
  MissingCentroid,
  ConfigError,
  SpecError,
  ResampleExhausted,
  FormatVersionMismatch,
  CorruptFile,
  IoError,
  NumericError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BadLabel: return "BadLabel";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::StepOutOfRange: return "StepOutOfRange";
    case ErrorCode::MissingCentroid: return "MissingCentroid";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::SpecError: return "SpecError";
    case ErrorCode::ResampleExhausted: return "ResampleExhausted";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NumericError: return "NumericError";
  }
  return "Unknown";
}

/// Every failure raised by the library. `code()` identifies the failure class;
/// `what()` carries "<Code>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

inline void require(bool cond, ErrorCode code, const std::string& detail) {
  if (!cond) fail(code, detail);
}

}  // namespace pest

#endif  // PEST_ERROR_HPP_
