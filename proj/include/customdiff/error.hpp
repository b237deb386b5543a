// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cdiff {

enum class ErrorCode {
  InvalidInput,
  SingularMatrix,
  NumericalFailure,
  UnknownToken,
  NoRareToken,
  EmptyRegularizationSet,
  Divergence,
  DegenerateRegularization,
  SingularTargetSystem,
  CorruptCheckpoint,
  Io,
  Usage,
};

const char* error_code_name(ErrorCode code);

// Every failure surfaced by the library carries a code so the C API can map
// it onto a status value without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace cdiff
