#include "resflow/status.h"

namespace resflow {

const char* ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return "invalid argument";
    case ErrorCode::kNotFound:
      return "not found";
    case ErrorCode::kMalformed:
      return "malformed";
    case ErrorCode::kOutOfRange:
      return "out of range";
    case ErrorCode::kIo:
      return "io";
    case ErrorCode::kDegenerate:
      return "degenerate";
    case ErrorCode::kCollision:
      return "collision";
    case ErrorCode::kModelGap:
      return "model gap";
    case ErrorCode::kStarvation:
      return "starvation";
    case ErrorCode::kPoolClosed:
      return "pool closed";
    case ErrorCode::kCoverageGap:
      return "coverage gap";
  }
  return "unknown";
}

}  // namespace resflow
