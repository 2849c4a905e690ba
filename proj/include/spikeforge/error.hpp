// Copyright 2026 The SpikeForge Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace spikeforge {

enum class ErrorCode {
  kInvalidArgument,
  kUnsupportedTopology,
  kMustFoldFirst,
  kStaleState,
  kDiverged,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kSizeMismatch,
  kValidation,
  kUnknownFixture,
  kIo,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kUnsupportedTopology: return "unsupported-topology";
    case ErrorCode::kMustFoldFirst: return "must-fold-first";
    case ErrorCode::kStaleState: return "stale-state";
    case ErrorCode::kDiverged: return "diverged";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kVersionMismatch: return "version-mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kSizeMismatch: return "size-mismatch";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kUnknownFixture: return "unknown-fixture";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

/// Every failure raised by the toolkit carries one of the codes above so
/// callers (and tests) can tell e.g. a truncated file from a bad magic.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace spikeforge
