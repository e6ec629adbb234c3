#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cxgame {

enum class ErrorKind {
  // stats
  LengthMismatch,
  EmptyInput,
  TooFewItems,
  UndefinedStatistic,
  TooManyDegenerate,
  MissingModelVerdict,
  // provider
  UnknownModel,
  TransportError,
  ProviderRefusal,
  RetriesExhausted,
  ScriptExhausted,
  // judge / tagging
  UnparsableVerdict,
  ExtractionDegenerate,
  ShapeMismatch,
  // annotation
  InsufficientItems,
  SessionComplete,
  UnknownItem,
  ValidationError,
  MappingGap,
  BlindingViolation,
  // engine / cli
  PreconditionViolation,
  StepTimeout,
  CorruptState,
  MissingInputs,
  ConfigError,
  IoError,
  InvariantViolation,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the harness; callers branch on kind().
// `detail` carries auxiliary payload such as the raw judge text of an
// unparsable verdict or the stage name of a missing input.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string detail = {})
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        detail_(std::move(detail)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

// True for errors caused by bad user input or configuration rather than a
// broken internal invariant. Drives the CLI exit code (1 vs 2).
bool is_user_error(ErrorKind kind);

}  // namespace cxgame
