#include "zspose/error.hpp"

namespace zspose {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptyForeground: return "EmptyForeground";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NumericalUnderflow: return "NumericalUnderflow";
    case ErrorCode::AllViewsUnusable: return "AllViewsUnusable";
    case ErrorCode::InvalidFrame: return "InvalidFrame";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::InvalidDepth: return "InvalidDepth";
    case ErrorCode::MissingLabel: return "MissingLabel";
    case ErrorCode::SamplingExhausted: return "SamplingExhausted";
    case ErrorCode::NoVisibleParts: return "NoVisibleParts";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::NoValidDepth: return "NoValidDepth";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

}  // namespace zspose
