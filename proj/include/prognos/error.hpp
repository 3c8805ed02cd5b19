#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prognos {

enum class ErrorCode {
  InvalidArgument,
  Io,
  Parse,
  // backend
  UnknownTemplate,
  UnboundPlaceholder,
  Timeout,
  Upstream,
  UnreadableImage,
  EmptyText,
  FixtureMiss,
  // wsi
  DimensionMismatch,
  BadThreshold,
  MissingLevelImage,
  MissingSubTiles,
  // gene
  EmptyCategory,
  AllCategoriesEmpty,
  // bank
  DuplicateEntry,
  CorruptBank,
  // retrieval
  NoOverlap,
  WeightsNotNormalized,
  EmptyIndex,
  // inference
  TooFewScores,
  NonPositiveTime,
  MissingExpertPredictions,
  Leakage,
  // survstats
  NoComparablePairs,
  NoEvents,
  DegenerateSplit,
  TooFewCases,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Upstream failure carrying the HTTP status (0 when the connection failed).
class UpstreamError : public Error {
 public:
  UpstreamError(int status, const std::string& what)
      : Error(ErrorCode::Upstream, "status " + std::to_string(status) + ": " + what),
        status_(status) {}

  int status() const noexcept { return status_; }
  bool retryable() const noexcept { return status_ == 0 || status_ == 429 || status_ >= 500; }

 private:
  int status_;
};

}  // namespace prognos
