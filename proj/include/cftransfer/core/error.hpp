// Copyright 2026 The cftransfer Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace cftransfer {

/// Category tag carried by every error so the CLI can print a single
/// machine-parsable line (`error <category>: <message>`).
enum class ErrorKind {
  kInvalidArgument,
  kEmptyInput,
  kDimensionMismatch,
  kNotFound,
  kNumerical,
  kConfig,
  kIo,
  kFormat,
  kStaleCache,
};

inline const char* ToString(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kEmptyInput: return "empty_input";
    case ErrorKind::kDimensionMismatch: return "dimension_mismatch";
    case ErrorKind::kNotFound: return "not_found";
    case ErrorKind::kNumerical: return "numerical";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kStaleCache: return "stale_cache";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void Fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void Require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) Fail(kind, message);
}

}  // namespace cftransfer
