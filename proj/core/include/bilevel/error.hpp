#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bilevel {

enum class ErrorCode {
  kInvalidArgument,
  kLayoutMismatch,
  kLengthMismatch,
  kNonFiniteValue,
  kMissingSegment,
  kInsufficientClasses,
  kInsufficientItemsPerClass,
  kMixedDimensions,
  kEmptyClass,
  kParseError,
  kTrajectoryNotRecorded,
  kInsufficientIterates,
  kIndefiniteCurvature,
  kUnknownMethod,
  kConfigError,
  kIoError,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so
// callers (and tests) can branch on the kind rather than the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by the trainer when a non-finite value appears mid-run.
class NumericAbort : public Error {
 public:
  NumericAbort(std::size_t meta_iter, const std::string& message);

  std::size_t meta_iter() const noexcept { return meta_iter_; }

 private:
  std::size_t meta_iter_;
};

}  // namespace bilevel
