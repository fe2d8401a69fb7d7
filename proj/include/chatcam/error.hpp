#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace chatcam {

// Machine-readable error codes. The string form is part of the HTTP contract.
enum class ErrorCode {
  DegenerateRotation,
  InvalidRotation,
  InvalidTrajectory,
  LengthMismatch,
  ShapeError,
  IndexError,
  TrainingDiverged,
  ContextOverflow,
  UnknownToken,
  EmptyPrompt,
  EmptyScene,
  NotDifferentiable,
  UnparsableQuery,
  RemotePlannerUnavailable,
  PlanValidationFailed,
  InfeasibleComposition,
  SceneNotFound,
  TrajectoryNotFound,
  ModelsNotLoaded,
  BadRequest,
  IoError,
  FormatError,
  RemoteEmbeddingUnavailable,
};

inline std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::DegenerateRotation: return "DegenerateRotation";
    case ErrorCode::InvalidRotation: return "InvalidRotation";
    case ErrorCode::InvalidTrajectory: return "InvalidTrajectory";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::IndexError: return "IndexError";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    case ErrorCode::ContextOverflow: return "ContextOverflow";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::EmptyPrompt: return "EmptyPrompt";
    case ErrorCode::EmptyScene: return "EmptyScene";
    case ErrorCode::NotDifferentiable: return "NotDifferentiable";
    case ErrorCode::UnparsableQuery: return "UnparsableQuery";
    case ErrorCode::RemotePlannerUnavailable: return "RemotePlannerUnavailable";
    case ErrorCode::PlanValidationFailed: return "PlanValidationFailed";
    case ErrorCode::InfeasibleComposition: return "InfeasibleComposition";
    case ErrorCode::SceneNotFound: return "SceneNotFound";
    case ErrorCode::TrajectoryNotFound: return "TrajectoryNotFound";
    case ErrorCode::ModelsNotLoaded: return "ModelsNotLoaded";
    case ErrorCode::BadRequest: return "BadRequest";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::RemoteEmbeddingUnavailable: return "RemoteEmbeddingUnavailable";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a code. Pipeline failures
/// additionally carry the index of the plan step that raised them.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  std::optional<std::size_t> step() const noexcept { return step_; }

  Error with_step(std::size_t step) const {
    Error e(code_, detail_);
    e.step_ = step;
    return e;
  }

 private:
  ErrorCode code_;
  std::string detail_;
  std::optional<std::size_t> step_;
};

}  // namespace chatcam
