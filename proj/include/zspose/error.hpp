#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace zspose {

enum class ErrorCode {
  InvalidArgument,
  // features
  EmptyForeground,
  DimMismatch,
  NumericalUnderflow,
  // viewsel / pipeline
  AllViewsUnusable,
  InvalidFrame,
  // solver
  DegenerateConfiguration,
  NoConsensus,
  InvalidDepth,
  // eval
  MissingLabel,
  // synth
  SamplingExhausted,
  NoVisibleParts,
  // io
  BadMagic,
  TruncatedFile,
  VersionUnsupported,
  NoValidDepth,
  MissingFile,
  SchemaError,
  IoFailure,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace zspose
