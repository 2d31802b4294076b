#include "canonet/errors.hpp"

namespace canonet {

std::string_view errorName(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateRotation:
      return "DegenerateRotation";
    case ErrorCode::FrameCountMismatch:
      return "FrameCountMismatch";
    case ErrorCode::InvalidScale:
      return "InvalidScale";
    case ErrorCode::DegenerateSkeleton:
      return "DegenerateSkeleton";
    case ErrorCode::ShapeMismatch:
      return "ShapeMismatch";
    case ErrorCode::NotScalar:
      return "NotScalar";
    case ErrorCode::MissingGradients:
      return "MissingGradients";
    case ErrorCode::BadLength:
      return "BadLength";
    case ErrorCode::EmptyBatch:
      return "EmptyBatch";
    case ErrorCode::NonFiniteLoss:
      return "NonFiniteLoss";
    case ErrorCode::Io:
      return "Io";
    case ErrorCode::CorruptCheckpoint:
      return "CorruptCheckpoint";
    case ErrorCode::InvalidSpec:
      return "InvalidSpec";
    case ErrorCode::ParseError:
      return "ParseError";
    case ErrorCode::TopologyError:
      return "TopologyError";
    case ErrorCode::GapTooLarge:
      return "GapTooLarge";
    case ErrorCode::TooShort:
      return "TooShort";
    case ErrorCode::TooFewPoints:
      return "TooFewPoints";
    case ErrorCode::LengthMismatch:
      return "LengthMismatch";
    case ErrorCode::Empty:
      return "Empty";
    case ErrorCode::EmptyIndex:
      return "EmptyIndex";
    case ErrorCode::UnknownFormat:
      return "UnknownFormat";
    case ErrorCode::Usage:
      return "Usage";
  }
  return "Unknown";
}

} // namespace canonet
