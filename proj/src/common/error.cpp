#include "needle/common/error.hpp"

namespace needle {

std::string_view errcName(Errc code) noexcept {
  switch (code) {
    case Errc::PathNotFound: return "PathNotFound";
    case Errc::NotADirectory: return "NotADirectory";
    case Errc::PermissionDenied: return "PermissionDenied";
    case Errc::UnknownDirectory: return "UnknownDirectory";
    case Errc::UnknownEmbedder: return "UnknownEmbedder";
    case Errc::UnknownCollection: return "UnknownCollection";
    case Errc::CollectionExistsWithDifferentParams: return "CollectionExistsWithDifferentParams";
    case Errc::InvalidDim: return "InvalidDim";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::NonFiniteComponent: return "NonFiniteComponent";
    case Errc::ParseError: return "ParseError";
    case Errc::DuplicateName: return "DuplicateName";
    case Errc::DimMismatchWithExistingCollection: return "DimMismatchWithExistingCollection";
    case Errc::BatchTooLarge: return "BatchTooLarge";
    case Errc::EmbedderUnavailable: return "EmbedderUnavailable";
    case Errc::AllEnginesFailed: return "AllEnginesFailed";
    case Errc::NoEnabledEngines: return "NoEnabledEngines";
    case Errc::Timeout: return "Timeout";
    case Errc::BadResponse: return "BadResponse";
    case Errc::HttpError: return "HttpError";
    case Errc::MissingWeight: return "MissingWeight";
    case Errc::TooFewPoints: return "TooFewPoints";
    case Errc::MisalignedEmbeddings: return "MisalignedEmbeddings";
    case Errc::EmptyRelevantSet: return "EmptyRelevantSet";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::NotFound: return "NotFound";
    case Errc::Conflict: return "Conflict";
    case Errc::Io: return "Io";
    case Errc::Corrupt: return "Corrupt";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& detail)
    : std::runtime_error(std::string(errcName(code)) + (detail.empty() ? "" : ": " + detail)),
      code_(code),
      detail_(detail) {}

void fail(Errc code, const std::string& detail) { throw Error(code, detail); }

}  // namespace needle
