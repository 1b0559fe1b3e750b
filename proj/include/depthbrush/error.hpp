// Copyright 2026 The Depthbrush Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace depthbrush {

enum class ErrorCode {
  kMalformedPng,
  kUnsupportedPng,
  kInvalidDims,
  kMalformedDepth,
  kNotNormalized,
  kThresholdOutOfRange,
  kDimMismatch,
  kMalformedCascade,
  kUnsupportedCascade,
  kWindowOutOfBounds,
  kBackendUnreachable,
  kBackendRejected,
  kBackendFailed,
  kBadPayload,
  kConfigInvalid,
  kIo,
};

inline constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedPng: return "MalformedPng";
    case ErrorCode::kUnsupportedPng: return "UnsupportedPng";
    case ErrorCode::kInvalidDims: return "InvalidDims";
    case ErrorCode::kMalformedDepth: return "MalformedDepth";
    case ErrorCode::kNotNormalized: return "NotNormalized";
    case ErrorCode::kThresholdOutOfRange: return "ThresholdOutOfRange";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kMalformedCascade: return "MalformedCascade";
    case ErrorCode::kUnsupportedCascade: return "UnsupportedCascade";
    case ErrorCode::kWindowOutOfBounds: return "WindowOutOfBounds";
    case ErrorCode::kBackendUnreachable: return "BackendUnreachable";
    case ErrorCode::kBackendRejected: return "BackendRejected";
    case ErrorCode::kBackendFailed: return "BackendFailed";
    case ErrorCode::kBadPayload: return "BadPayload";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

// Every failure in the library surfaces as an Error. Pipeline stages attach
// their stage name before rethrowing so callers can tell where a run died.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        detail_(std::move(message)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  const std::string& stage() const noexcept { return stage_; }

  Error& set_stage(std::string stage) {
    stage_ = std::move(stage);
    return *this;
  }

 private:
  ErrorCode code_;
  std::string detail_;
  std::string stage_;
};

}  // namespace depthbrush
