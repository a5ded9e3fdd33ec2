#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace slab {

// Every failure raised by the library carries one of these codes. The CLI maps
// validation-class codes and runtime-class codes onto distinct exit statuses.
enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kNonFinite,
  kEmptyInput,
  kFingerprintMismatch,
  kVersionMismatch,
  kTruncated,
  kChecksumMismatch,
  kConfigMismatch,
  kHashMismatch,
  kUnreachable,
  kIo,
  kParse,
  kAllTrialsFailed,
};

std::string_view to_string(ErrorCode code);

// True for errors caused by bad inputs or configuration rather than by a
// failure while running.
bool is_validation_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace slab
