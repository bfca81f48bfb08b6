#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ipft {

enum class ErrorCode {
  malformed_row,
  empty_trace,
  non_monotone_timestamps,
  series_too_short,
  invalid_profile,
  shape_mismatch,
  stale_cache,
  invalid_hyperparams,
  empty_dataset,
  invalid_dimension,
  empty_candidate_space,
  no_active_nodes,
  reserve_exhausted,
  last_node_protected,
  invalid_prediction,
  empty_grid,
  config_invalid,
  missing_artifact,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::malformed_row: return "MalformedRow";
    case ErrorCode::empty_trace: return "EmptyTrace";
    case ErrorCode::non_monotone_timestamps: return "NonMonotoneTimestamps";
    case ErrorCode::series_too_short: return "SeriesTooShort";
    case ErrorCode::invalid_profile: return "InvalidProfile";
    case ErrorCode::shape_mismatch: return "ShapeMismatch";
    case ErrorCode::stale_cache: return "StaleCache";
    case ErrorCode::invalid_hyperparams: return "InvalidHyperparams";
    case ErrorCode::empty_dataset: return "EmptyDataset";
    case ErrorCode::invalid_dimension: return "InvalidDimension";
    case ErrorCode::empty_candidate_space: return "EmptyCandidateSpace";
    case ErrorCode::no_active_nodes: return "NoActiveNodes";
    case ErrorCode::reserve_exhausted: return "ReserveExhausted";
    case ErrorCode::last_node_protected: return "LastNodeProtected";
    case ErrorCode::invalid_prediction: return "InvalidPrediction";
    case ErrorCode::empty_grid: return "EmptyGrid";
    case ErrorCode::config_invalid: return "ConfigInvalid";
    case ErrorCode::missing_artifact: return "MissingArtifact";
  }
  return "Unknown";
}

/// All recoverable failures in the library surface as this exception; the
/// code identifies the contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace ipft
