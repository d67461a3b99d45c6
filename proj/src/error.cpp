#include "iclforge/error.hpp"

namespace iclforge {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kEmptyField: return "EmptyField";
    case ErrorCode::kDonorTooSmall: return "DonorTooSmall";
    case ErrorCode::kSameTask: return "SameTask";
    case ErrorCode::kMissingCorruption: return "MissingCorruption";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kUnfittedParams: return "UnfittedParams";
    case ErrorCode::kEmptyMatrix: return "EmptyMatrix";
    case ErrorCode::kUnknownId: return "UnknownId";
    case ErrorCode::kNotEnoughNeighbors: return "NotEnoughNeighbors";
    case ErrorCode::kEmptyLogProbs: return "EmptyLogProbs";
    case ErrorCode::kBackendUnavailable: return "BackendUnavailable";
    case ErrorCode::kProtocolError: return "ProtocolError";
    case ErrorCode::kContextOverflow: return "ContextOverflow";
    case ErrorCode::kPartialFailure: return "PartialFailure";
    case ErrorCode::kPoolTooSmall: return "PoolTooSmall";
    case ErrorCode::kMissingEmbedding: return "MissingEmbedding";
    case ErrorCode::kKernelNotPsd: return "KernelNotPsd";
    case ErrorCode::kNumericalBreakdown: return "NumericalBreakdown";
    case ErrorCode::kMissingScore: return "MissingScore";
    case ErrorCode::kMissingLabel: return "MissingLabel";
    case ErrorCode::kUnresolvedId: return "UnresolvedId";
    case ErrorCode::kNoReferences: return "NoReferences";
    case ErrorCode::kRunFailed: return "RunFailed";
  }
  return "Unknown";
}

namespace {

std::string format_message(ErrorCode code, const std::string& message) {
  std::string out(error_code_name(code));
  out += ": ";
  out += message;
  return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& message,
             std::vector<std::string> ids)
    : std::runtime_error(format_message(code, message)),
      code_(code),
      ids_(std::move(ids)) {}

bool Error::is_validation() const noexcept {
  switch (code_) {
    case ErrorCode::kBackendUnavailable:
    case ErrorCode::kProtocolError:
    case ErrorCode::kPartialFailure:
    case ErrorCode::kNumericalBreakdown:
    case ErrorCode::kKernelNotPsd:
    case ErrorCode::kRunFailed:
    case ErrorCode::kContextOverflow:
      return false;
    default:
      return true;
  }
}

}  // namespace iclforge
