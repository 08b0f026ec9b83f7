// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace darwin {

enum class ErrorCode {
  kInvalidArgument,
  kIo,
  kMalformedHeader,
  kOverlappingRanges,
  kRangeGap,
  kOffsetOutOfRange,
  kDuplicateName,
  kUnsupportedDtype,
  kShapeMismatch,
  kMissingTensor,
  kIncompatible,
  kEvaluatorExit,
  kEvaluatorTimeout,
  kEvaluatorOutput,
  kEvaluationFailed,
  kUsage,
};

constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kMalformedHeader: return "malformed_header";
    case ErrorCode::kOverlappingRanges: return "overlapping_ranges";
    case ErrorCode::kRangeGap: return "range_gap";
    case ErrorCode::kOffsetOutOfRange: return "offset_out_of_range";
    case ErrorCode::kDuplicateName: return "duplicate_name";
    case ErrorCode::kUnsupportedDtype: return "unsupported_dtype";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kMissingTensor: return "missing_tensor";
    case ErrorCode::kIncompatible: return "incompatible";
    case ErrorCode::kEvaluatorExit: return "evaluator_exit";
    case ErrorCode::kEvaluatorTimeout: return "evaluator_timeout";
    case ErrorCode::kEvaluatorOutput: return "evaluator_output";
    case ErrorCode::kEvaluationFailed: return "evaluation_failed";
    case ErrorCode::kUsage: return "usage";
  }
  return "unknown";
}

/// Process exit status for a failure class: 2 usage, 3 input/format,
/// 4 incompatibility, 5 evaluator failure.
constexpr int exit_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUsage:
      return 2;
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kMissingTensor:
    case ErrorCode::kIncompatible:
      return 4;
    case ErrorCode::kEvaluatorExit:
    case ErrorCode::kEvaluatorTimeout:
    case ErrorCode::kEvaluatorOutput:
    case ErrorCode::kEvaluationFailed:
      return 5;
    default:
      return 3;
  }
}

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

}  // namespace darwin
