#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xvqa {

enum class ErrorCode {
  ParseError,
  ReferenceError,
  InvariantError,
  ConfigError,
  BoundsError,
  ShapeError,
  RangeError,
  PhaseError,
  SessionComplete,
  UnknownSession,
  UnknownMode,
  ReplayError,
  UndefinedTest,
  Quarantined,
  IoError,
};

std::string_view error_code_name(ErrorCode code);

// Every failure the library reports carries a machine-readable code so the
// service and CLI can map it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace xvqa
