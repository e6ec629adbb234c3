#include "cxgame/error.hpp"

namespace cxgame {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::TooFewItems: return "TooFewItems";
    case ErrorKind::UndefinedStatistic: return "UndefinedStatistic";
    case ErrorKind::TooManyDegenerate: return "TooManyDegenerate";
    case ErrorKind::MissingModelVerdict: return "MissingModelVerdict";
    case ErrorKind::UnknownModel: return "UnknownModel";
    case ErrorKind::TransportError: return "TransportError";
    case ErrorKind::ProviderRefusal: return "ProviderRefusal";
    case ErrorKind::RetriesExhausted: return "RetriesExhausted";
    case ErrorKind::ScriptExhausted: return "ScriptExhausted";
    case ErrorKind::UnparsableVerdict: return "UnparsableVerdict";
    case ErrorKind::ExtractionDegenerate: return "ExtractionDegenerate";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InsufficientItems: return "InsufficientItems";
    case ErrorKind::SessionComplete: return "SessionComplete";
    case ErrorKind::UnknownItem: return "UnknownItem";
    case ErrorKind::ValidationError: return "ValidationError";
    case ErrorKind::MappingGap: return "MappingGap";
    case ErrorKind::BlindingViolation: return "BlindingViolation";
    case ErrorKind::PreconditionViolation: return "PreconditionViolation";
    case ErrorKind::StepTimeout: return "StepTimeout";
    case ErrorKind::CorruptState: return "CorruptState";
    case ErrorKind::MissingInputs: return "MissingInputs";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

bool is_user_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvariantViolation:
    case ErrorKind::PreconditionViolation:
      return false;
    default:
      return true;
  }
}

}  // namespace cxgame
