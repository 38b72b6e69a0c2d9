// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtk/error.hpp"

namespace qtk {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput: return "InvalidInput";
    case ErrorKind::kShapeError: return "ShapeError";
    case ErrorKind::kUnsupported: return "Unsupported";
    case ErrorKind::kOverflowViolation: return "OverflowViolation";
    case ErrorKind::kLaneOverflow: return "LaneOverflow";
    case ErrorKind::kAccumulatorOverflow: return "AccumulatorOverflow";
    case ErrorKind::kEmptyCache: return "EmptyCache";
    case ErrorKind::kInvalidConfig: return "InvalidConfig";
    case ErrorKind::kIoError: return "IoError";
    case ErrorKind::kFormatError: return "FormatError";
  }
  return "Unknown";
}

}  // namespace qtk
