#include "coached/error.hpp"

namespace coached {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kEmptyDocument: return "EmptyDocument";
    case ErrorKind::kWrongDocument: return "WrongDocument";
    case ErrorKind::kInvalidPolicy: return "InvalidPolicy";
    case ErrorKind::kEmptyCorpus: return "EmptyCorpus";
    case ErrorKind::kDimMismatch: return "DimMismatch";
    case ErrorKind::kBuildFailed: return "BuildFailed";
    case ErrorKind::kStaleIndex: return "StaleIndex";
    case ErrorKind::kUnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::kCorruptIndex: return "CorruptIndex";
    case ErrorKind::kBackendUnavailable: return "BackendUnavailable";
    case ErrorKind::kMalformedReply: return "MalformedReply";
    case ErrorKind::kScriptExhausted: return "ScriptExhausted";
    case ErrorKind::kDimInconsistent: return "DimInconsistent";
    case ErrorKind::kTemplateError: return "TemplateError";
    case ErrorKind::kEmptyDraft: return "EmptyDraft";
    case ErrorKind::kUnparseableVerdict: return "UnparseableVerdict";
    case ErrorKind::kMissingReplacement: return "MissingReplacement";
    case ErrorKind::kValidationError: return "ValidationError";
    case ErrorKind::kBadScore: return "BadScore";
    case ErrorKind::kBadPosition: return "BadPosition";
    case ErrorKind::kDuplicateRating: return "DuplicateRating";
    case ErrorKind::kDegenerateVariance: return "DegenerateVariance";
    case ErrorKind::kSingularDesign: return "SingularDesign";
    case ErrorKind::kIoError: return "IoError";
    case ErrorKind::kConfigError: return "ConfigError";
    case ErrorKind::kNotFound: return "NotFound";
  }
  return "Unknown";
}

}  // namespace coached
