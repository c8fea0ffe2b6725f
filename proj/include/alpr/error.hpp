#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace alpr {

enum class ErrorKind {
  ShapeMismatch,
  ChannelMismatch,
  DegenerateHistogram,
  OutOfBounds,
  InvalidArgument,
  MalformedLine,
  CorruptRecord,
  IoFailure,
  ConfigError,
  EngineNotFound,
  EngineCrashed,
  BackendFailure,
  SourceUnavailable,
  EmptyGroundTruth,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ChannelMismatch: return "ChannelMismatch";
    case ErrorKind::DegenerateHistogram: return "DegenerateHistogram";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::MalformedLine: return "MalformedLine";
    case ErrorKind::CorruptRecord: return "CorruptRecord";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::EngineNotFound: return "EngineNotFound";
    case ErrorKind::EngineCrashed: return "EngineCrashed";
    case ErrorKind::BackendFailure: return "BackendFailure";
    case ErrorKind::SourceUnavailable: return "SourceUnavailable";
    case ErrorKind::EmptyGroundTruth: return "EmptyGroundTruth";
  }
  return "Unknown";
}

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it onto a stable exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// CLI exit code contract: 0 success, 1 environment, 2 input, 3 degenerate data.
constexpr int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateHistogram:
      return 3;
    case ErrorKind::IoFailure:
    case ErrorKind::EngineNotFound:
    case ErrorKind::EngineCrashed:
    case ErrorKind::BackendFailure:
    case ErrorKind::SourceUnavailable:
      return 1;
    default:
      return 2;
  }
}

}  // namespace alpr
