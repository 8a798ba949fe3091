#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uwbtdoa {

enum class ErrorCode {
  kDegenerateDirection,
  kSingularGeometry,
  kInvalidInput,
  kInvalidStep,
  kConfiguration,
  kTrainingDiverged,
  kUnrecognizedModelFile,
  kVersionMismatch,
  kTruncatedFile,
  kDimensionMismatch,
  kCovarianceDegenerate,
  kEmptyDataset,
  kArenaViolation,
  kIo,
};

/// Stable machine-readable name of an error code, e.g. "singular_geometry".
std::string_view to_string(ErrorCode code);

/// Exception carrying a code so callers (and the CLI) can branch on the kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace uwbtdoa
