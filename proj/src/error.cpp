#include "uwbtdoa/error.hpp"

namespace uwbtdoa {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegenerateDirection: return "degenerate_direction";
    case ErrorCode::kSingularGeometry: return "singular_geometry";
    case ErrorCode::kInvalidInput: return "invalid_input";
    case ErrorCode::kInvalidStep: return "invalid_step";
    case ErrorCode::kConfiguration: return "configuration";
    case ErrorCode::kTrainingDiverged: return "training_diverged";
    case ErrorCode::kUnrecognizedModelFile: return "unrecognized_model_file";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kTruncatedFile: return "truncated_file";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kCovarianceDegenerate: return "covariance_degenerate";
    case ErrorCode::kEmptyDataset: return "empty_dataset";
    case ErrorCode::kArenaViolation: return "arena_violation";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace uwbtdoa
