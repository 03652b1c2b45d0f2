#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace svrnn {

// Error categories surface as distinct CLI exit codes.
enum class ErrorKind {
  shape = 2,
  value = 3,
  numeric = 4,
  io = 5,
  format = 6,
  config = 7,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace svrnn
