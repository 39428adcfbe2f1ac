#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowlift {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kNonFinite,
  kBehindCamera,
  kDegenerate,
  kIo,
  kMalformedHeader,
  kTruncated,
  kUnsupportedVersion,
  kSkeletonMismatch,
  kMaxRetries,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; `code()` distinguishes failure kinds.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& msg) {
  if (!cond) throw Error(code, msg);
}

}  // namespace flowlift
