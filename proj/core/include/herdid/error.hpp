#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace herdid {

enum class ErrorCode {
  kInvalidArgument,
  kParseError,
  kDuplicateId,
  kInvalidBox,
  kNotFound,
  kProvenanceConflict,
  kProvenanceMismatch,
  kDimensionMismatch,
  kInvalidPoolSize,
  kInsufficientSamples,
  kSingleClass,
  kNonFiniteValue,
  kAlreadySplit,
  kCalibrationMissing,
  kUndecodableImage,
  kUnknownLayer,
  kBackendFailure,
  kIoError,
  kFormatError,
};

std::string_view to_string(ErrorCode code);

/// Exception type thrown by every herdid module. The code lets callers
/// (and the HTTP layer) map failures without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace herdid
