#include "bilevel/error.hpp"

namespace bilevel {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kLayoutMismatch: return "LayoutMismatch";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kMissingSegment: return "MissingSegment";
    case ErrorCode::kInsufficientClasses: return "InsufficientClasses";
    case ErrorCode::kInsufficientItemsPerClass: return "InsufficientItemsPerClass";
    case ErrorCode::kMixedDimensions: return "MixedDimensions";
    case ErrorCode::kEmptyClass: return "EmptyClass";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kTrajectoryNotRecorded: return "TrajectoryNotRecorded";
    case ErrorCode::kInsufficientIterates: return "InsufficientIterates";
    case ErrorCode::kIndefiniteCurvature: return "IndefiniteCurvature";
    case ErrorCode::kUnknownMethod: return "UnknownMethod";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

NumericAbort::NumericAbort(std::size_t meta_iter, const std::string& message)
    : Error(ErrorCode::kNonFiniteValue,
            "aborted at meta-iteration " + std::to_string(meta_iter) + ": " + message),
      meta_iter_(meta_iter) {}

}  // namespace bilevel
