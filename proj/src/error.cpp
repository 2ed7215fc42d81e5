#include "forge/error.hpp"

namespace forge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyInput:
      return "EmptyInput";
    case ErrorCode::DecodeFailure:
      return "DecodeFailure";
    case ErrorCode::InvalidWidth:
      return "InvalidWidth";
    case ErrorCode::DuplicateId:
      return "DuplicateId";
    case ErrorCode::EmptyShingleSet:
      return "EmptyShingleSet";
    case ErrorCode::IncompatibleSignatures:
      return "IncompatibleSignatures";
    case ErrorCode::BandShapeMismatch:
      return "BandShapeMismatch";
    case ErrorCode::InvalidThreshold:
      return "InvalidThreshold";
    case ErrorCode::EmptyCorpus:
      return "EmptyCorpus";
    case ErrorCode::EmptyFragment:
      return "EmptyFragment";
    case ErrorCode::ZeroProbability:
      return "ZeroProbability";
    case ErrorCode::InvalidLexicon:
      return "InvalidLexicon";
    case ErrorCode::ZeroBudget:
      return "ZeroBudget";
    case ErrorCode::AllZeroWeights:
      return "AllZeroWeights";
    case ErrorCode::PoolExhausted:
      return "PoolExhausted";
    case ErrorCode::GeneratorParseError:
      return "GeneratorParseError";
    case ErrorCode::InsufficientDistractors:
      return "InsufficientDistractors";
    case ErrorCode::NoAnchorTerm:
      return "NoAnchorTerm";
    case ErrorCode::ProbeUnavailable:
      return "ProbeUnavailable";
    case ErrorCode::InsufficientItems:
      return "InsufficientItems";
    case ErrorCode::BenchmarkParseError:
      return "BenchmarkParseError";
    case ErrorCode::TransportFailure:
      return "TransportFailure";
    case ErrorCode::UnknownItemId:
      return "UnknownItemId";
    case ErrorCode::EmptyRecords:
      return "EmptyRecords";
    case ErrorCode::ProviderUnavailable:
      return "ProviderUnavailable";
    case ErrorCode::ProviderMismatch:
      return "ProviderMismatch";
    case ErrorCode::EmptyText:
      return "EmptyText";
    case ErrorCode::DimsMismatch:
      return "DimsMismatch";
    case ErrorCode::EmptyIndex:
      return "EmptyIndex";
    case ErrorCode::InvalidArgument:
      return "InvalidArgument";
    case ErrorCode::NonFiniteGradient:
      return "NonFiniteGradient";
    case ErrorCode::TraceTooShort:
      return "TraceTooShort";
    case ErrorCode::ParseError:
      return "ParseError";
    case ErrorCode::SchemaViolation:
      return "SchemaViolation";
    case ErrorCode::StageFailure:
      return "StageFailure";
    case ErrorCode::IoError:
      return "IoError";
  }
  return "Unknown";
}

}  // namespace forge
