#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace forge {

enum class ErrorCode {
  EmptyInput,
  DecodeFailure,
  InvalidWidth,
  DuplicateId,
  EmptyShingleSet,
  IncompatibleSignatures,
  BandShapeMismatch,
  InvalidThreshold,
  EmptyCorpus,
  EmptyFragment,
  ZeroProbability,
  InvalidLexicon,
  ZeroBudget,
  AllZeroWeights,
  PoolExhausted,
  GeneratorParseError,
  InsufficientDistractors,
  NoAnchorTerm,
  ProbeUnavailable,
  InsufficientItems,
  BenchmarkParseError,
  TransportFailure,
  UnknownItemId,
  EmptyRecords,
  ProviderUnavailable,
  ProviderMismatch,
  EmptyText,
  DimsMismatch,
  EmptyIndex,
  InvalidArgument,
  NonFiniteGradient,
  TraceTooShort,
  ParseError,
  SchemaViolation,
  StageFailure,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Error raised by every toolkit operation. The code identifies the contract
/// violation; the message carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace forge
