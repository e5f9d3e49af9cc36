#include "rcan/error.hpp"

namespace rcan {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kOk: return "Ok";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kEmptyShape: return "EmptyShape";
    case ErrorCode::kBroadcastError: return "BroadcastError";
    case ErrorCode::kNotScalar: return "NotScalar";
    case ErrorCode::kDetachedTensor: return "DetachedTensor";
    case ErrorCode::kNonFiniteOutput: return "NonFiniteOutput";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kOutputCollapsed: return "OutputCollapsed";
    case ErrorCode::kOddExtent: return "OddExtent";
    case ErrorCode::kEvenKernel: return "EvenKernel";
    case ErrorCode::kIndivisibleGroups: return "IndivisibleGroups";
    case ErrorCode::kBothBranchesDisabled: return "BothBranchesDisabled";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kUnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kEmptyBrainMask: return "EmptyBrainMask";
    case ErrorCode::kPatchLargerThanVolume: return "PatchLargerThanVolume";
    case ErrorCode::kTooFewCases: return "TooFewCases";
    case ErrorCode::kExtentTooSmall: return "ExtentTooSmall";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kInvalidLabelValue: return "InvalidLabelValue";
    case ErrorCode::kBadCheckpoint: return "BadCheckpoint";
    case ErrorCode::kBadHeader: return "BadHeader";
    case ErrorCode::kInternal: return "Internal";
  }
  return "Unknown";
}

}  // namespace rcan
