#pragma once

#include <stdexcept>
#include <string>

namespace scala {

// Error taxonomy mirrored by the CLI exit codes: usage errors exit 1,
// data/validation errors exit 2, runtime/numeric errors exit 3.
enum class ErrorKind {
  kUsage = 1,
  kData = 2,
  kRuntime = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_usage(const std::string& msg) {
  throw Error(ErrorKind::kUsage, msg);
}

[[noreturn]] inline void fail_data(const std::string& msg) {
  throw Error(ErrorKind::kData, msg);
}

[[noreturn]] inline void fail_runtime(const std::string& msg) {
  throw Error(ErrorKind::kRuntime, msg);
}

inline void check_data(bool cond, const std::string& msg) {
  if (!cond) fail_data(msg);
}

inline void check_runtime(bool cond, const std::string& msg) {
  if (!cond) fail_runtime(msg);
}

}  // namespace scala
