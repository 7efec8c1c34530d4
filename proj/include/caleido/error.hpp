#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace caleido {

/// Every failure the pipeline can report. The CLI prints the code name as a
/// machine-parseable prefix and the HTTP layer maps each code to a status.
enum class Errc {
  MalformedCatalog,
  EmptyCatalog,
  ConflictingIdentity,
  InvalidDescriptor,
  InvalidRecord,
  NoFeatures,
  UngroupedFeatures,
  ContextSyntax,
  InvalidFeature,
  MissingReference,
  InsufficientExamples,
  DuplicateFacility,
  IoFailure,
  EmptyContext,
  EmptySystemPrompt,
  UnsupportedRole,
  InvalidTemplate,
  InvalidMessage,
  InvalidConfig,
  BackendUnavailable,
  BackendRejected,
  Timeout,
  SplitViolation,
  Infeasible,
  InvalidProfile,
  InvalidAnnotation,
  EmptyAnnotation,
  MissingCells,
  NotFound,
  Conflict,
  NoRuns,
  Unauthorized,
  Usage,
};

std::string_view code_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::string field = {},
        std::optional<std::size_t> offset = std::nullopt)
      : std::runtime_error(message),
        code_(code),
        field_(std::move(field)),
        offset_(offset) {}

  Errc code() const noexcept { return code_; }
  // JSON-pointer-ish location of the offending field, when known.
  const std::string& field() const noexcept { return field_; }
  // Byte offset into the input, for parse errors.
  std::optional<std::size_t> offset() const noexcept { return offset_; }

  /// "E_CODE: message"
  std::string one_line() const;

 private:
  Errc code_;
  std::string field_;
  std::optional<std::size_t> offset_;
};

}  // namespace caleido
