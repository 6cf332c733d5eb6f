#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace needle {

// Error kinds surfaced across module boundaries. Names are stable and appear
// verbatim in CLI diagnostics and API error bodies.
enum class Errc {
  PathNotFound,
  NotADirectory,
  PermissionDenied,
  UnknownDirectory,
  UnknownEmbedder,
  UnknownCollection,
  CollectionExistsWithDifferentParams,
  InvalidDim,
  DimensionMismatch,
  DuplicateId,
  NonFiniteComponent,
  ParseError,
  DuplicateName,
  DimMismatchWithExistingCollection,
  BatchTooLarge,
  EmbedderUnavailable,
  AllEnginesFailed,
  NoEnabledEngines,
  Timeout,
  BadResponse,
  HttpError,
  MissingWeight,
  TooFewPoints,
  MisalignedEmbeddings,
  EmptyRelevantSet,
  InvalidArgument,
  NotFound,
  Conflict,
  Io,
  Corrupt,
};

std::string_view errcName(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail);

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

[[noreturn]] void fail(Errc code, const std::string& detail);

}  // namespace needle
