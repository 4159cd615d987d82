#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mmsn {

/// Error with a stable machine-parsable code (e.g. "AgeOutOfRange") plus a
/// human-readable message. The CLI prints the code and maps it to exit 1.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(std::string code, const std::string& msg) {
  throw Error(std::move(code), msg);
}

inline void require(bool cond, const char* code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace mmsn
