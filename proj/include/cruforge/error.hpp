// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cruforge {

// Every failure carries a stable machine-readable code (e.g. "BboxOutOfBounds")
// used in drop records, reward logs and CLI summaries.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// IndexOutOfRange, BboxOutOfBounds, NonPositiveScale.
class ToolError : public Error {
 public:
  using Error::Error;
};

class BackendUnavailable : public Error {
 public:
  explicit BackendUnavailable(const std::string& message)
      : Error("BackendUnavailable", message) {}
};

class BadJudgeResponse : public Error {
 public:
  explicit BadJudgeResponse(const std::string& message)
      : Error("BadJudgeResponse", message) {}
};

// Caller-side problems: bad files, bad flags, missing stage inputs. Maps to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace cruforge
