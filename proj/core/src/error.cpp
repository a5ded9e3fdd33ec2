#include "slab/error.hpp"

namespace slab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kEmptyInput: return "empty input";
    case ErrorCode::kFingerprintMismatch: return "vocabulary fingerprint mismatch";
    case ErrorCode::kVersionMismatch: return "format version mismatch";
    case ErrorCode::kTruncated: return "truncated file";
    case ErrorCode::kChecksumMismatch: return "checksum mismatch";
    case ErrorCode::kConfigMismatch: return "tensor shape disagrees with config";
    case ErrorCode::kHashMismatch: return "content hash mismatch";
    case ErrorCode::kUnreachable: return "source unreachable";
    case ErrorCode::kIo: return "i/o failure";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kAllTrialsFailed: return "all trials failed";
  }
  return "unknown error";
}

bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kEmptyInput:
    case ErrorCode::kFingerprintMismatch:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kConfigMismatch:
    case ErrorCode::kParse:
      return true;
    default:
      return false;
  }
}

}  // namespace slab
