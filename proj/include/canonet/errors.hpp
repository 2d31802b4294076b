#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace canonet {

enum class ErrorCode {
  DegenerateRotation,
  FrameCountMismatch,
  InvalidScale,
  DegenerateSkeleton,
  ShapeMismatch,
  NotScalar,
  MissingGradients,
  BadLength,
  EmptyBatch,
  NonFiniteLoss,
  Io,
  CorruptCheckpoint,
  InvalidSpec,
  ParseError,
  TopologyError,
  GapTooLarge,
  TooShort,
  TooFewPoints,
  LengthMismatch,
  Empty,
  EmptyIndex,
  UnknownFormat,
  Usage,
};

std::string_view errorName(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(errorName(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept {
    return code_;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

} // namespace canonet
