#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rcan {

// Values are stable: they are exported through the C API as rcan_status.
enum class ErrorCode : int {
  kOk = 0,
  kShapeMismatch = 1,
  kEmptyShape = 2,
  kBroadcastError = 3,
  kNotScalar = 4,
  kDetachedTensor = 5,
  kNonFiniteOutput = 6,
  kInvalidArgument = 7,
  kOutputCollapsed = 8,
  kOddExtent = 9,
  kEvenKernel = 10,
  kIndivisibleGroups = 11,
  kBothBranchesDisabled = 12,
  kConfigInvalid = 13,
  kBadMagic = 14,
  kUnsupportedDatatype = 15,
  kTruncatedFile = 16,
  kIoError = 17,
  kEmptyBrainMask = 18,
  kPatchLargerThanVolume = 19,
  kTooFewCases = 20,
  kExtentTooSmall = 21,
  kNonFiniteLoss = 22,
  kInvalidLabelValue = 23,
  kBadCheckpoint = 24,
  kBadHeader = 25,
  kInternal = 99,
};

std::string_view error_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace rcan
