#ifndef RESFLOW_STATUS_H_
#define RESFLOW_STATUS_H_

#include <stdexcept>
#include <string>

namespace resflow {

// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorCode {
  kInvalidArgument,
  kNotFound,
  kMalformed,
  kOutOfRange,
  kIo,
  kDegenerate,
  kCollision,
  kModelGap,
  kStarvation,
  kPoolClosed,
  kCoverageGap,
};

const char* ErrorCodeName(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace resflow

#endif  // RESFLOW_STATUS_H_
