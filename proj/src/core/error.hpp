// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

#include <fmt/format.h>

namespace appa {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kNumerical,
  kConfig,
  kIo,
  kHeaderParse,
  kVersionMismatch,
  kTruncated,
  kHeaderMismatch,
};

const char* to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so the
/// C API can map it onto a status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

template <typename... Args>
[[noreturn]] void fail(ErrorCode code, fmt::format_string<Args...> format, Args&&... args) {
  throw Error(code, fmt::format(format, std::forward<Args>(args)...));
}

template <typename... Args>
void check(bool condition, ErrorCode code, fmt::format_string<Args...> format, Args&&... args) {
  if (!condition) throw Error(code, fmt::format(format, std::forward<Args>(args)...));
}

}  // namespace appa
