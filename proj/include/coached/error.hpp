#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace coached {

enum class ErrorKind {
  kEmptyDocument,
  kWrongDocument,
  kInvalidPolicy,
  kEmptyCorpus,
  kDimMismatch,
  kBuildFailed,
  kStaleIndex,
  kUnsupportedVersion,
  kCorruptIndex,
  kBackendUnavailable,
  kMalformedReply,
  kScriptExhausted,
  kDimInconsistent,
  kTemplateError,
  kEmptyDraft,
  kUnparseableVerdict,
  kMissingReplacement,
  kValidationError,
  kBadScore,
  kBadPosition,
  kDuplicateRating,
  kDegenerateVariance,
  kSingularDesign,
  kIoError,
  kConfigError,
  kNotFound,
};

std::string_view error_kind_name(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace coached
