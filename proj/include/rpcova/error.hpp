#ifndef RPCOVA_ERROR_HPP
#define RPCOVA_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace rpcova {

enum class ErrorCode {
  InsufficientLocalData,
  EmptyNeighborhood,
  AllCandidatesFailed,
  InvalidPropensity,
  ZeroDensity,
  ZeroDelta,
  DegenerateVariance,
  TooFewPoints,
  ArmTooSmall,
  DegenerateGap,
  UnsupportedDim,
  InvalidArgument,
  ParseError,
  SchemaError,
  ConfigError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it onto an exit status and a machine-readable record.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InsufficientLocalData: return "InsufficientLocalData";
    case ErrorCode::EmptyNeighborhood: return "EmptyNeighborhood";
    case ErrorCode::AllCandidatesFailed: return "AllCandidatesFailed";
    case ErrorCode::InvalidPropensity: return "InvalidPropensity";
    case ErrorCode::ZeroDensity: return "ZeroDensity";
    case ErrorCode::ZeroDelta: return "ZeroDelta";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::ArmTooSmall: return "ArmTooSmall";
    case ErrorCode::DegenerateGap: return "DegenerateGap";
    case ErrorCode::UnsupportedDim: return "UnsupportedDim";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace rpcova

#endif  // RPCOVA_ERROR_HPP
