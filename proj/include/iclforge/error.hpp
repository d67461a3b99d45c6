#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace iclforge {

enum class ErrorCode {
  kInvalidArgument,
  kIo,
  kParseError,
  kDuplicateId,
  kEmptyField,
  kDonorTooSmall,
  kSameTask,
  kMissingCorruption,
  kEmptyDataset,
  kDimensionMismatch,
  kZeroVector,
  kUnfittedParams,
  kEmptyMatrix,
  kUnknownId,
  kNotEnoughNeighbors,
  kEmptyLogProbs,
  kBackendUnavailable,
  kProtocolError,
  kContextOverflow,
  kPartialFailure,
  kPoolTooSmall,
  kMissingEmbedding,
  kKernelNotPsd,
  kNumericalBreakdown,
  kMissingScore,
  kMissingLabel,
  kUnresolvedId,
  kNoReferences,
  kRunFailed,
};

std::string_view error_code_name(ErrorCode code);

// Every failure raised by the library. `ids` carries the offending example
// ids when the error is about specific records (DuplicateId, MissingScore,
// PartialFailure, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::vector<std::string> ids = {});

  ErrorCode code() const noexcept { return code_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  // True for failures caused by bad input or configuration rather than by
  // the runtime environment (network, numerics).
  bool is_validation() const noexcept;

 private:
  ErrorCode code_;
  std::vector<std::string> ids_;
};

}  // namespace iclforge
