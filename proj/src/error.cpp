#include "caleido/error.hpp"

namespace caleido {

std::string_view code_name(Errc code) {
  switch (code) {
    case Errc::MalformedCatalog: return "E_MALFORMED_CATALOG";
    case Errc::EmptyCatalog: return "E_EMPTY_CATALOG";
    case Errc::ConflictingIdentity: return "E_CONFLICTING_IDENTITY";
    case Errc::InvalidDescriptor: return "E_INVALID_DESCRIPTOR";
    case Errc::InvalidRecord: return "E_INVALID_RECORD";
    case Errc::NoFeatures: return "E_NO_FEATURES";
    case Errc::UngroupedFeatures: return "E_UNGROUPED_FEATURES";
    case Errc::ContextSyntax: return "E_CONTEXT_SYNTAX";
    case Errc::InvalidFeature: return "E_INVALID_FEATURE";
    case Errc::MissingReference: return "E_MISSING_REFERENCE";
    case Errc::InsufficientExamples: return "E_INSUFFICIENT_EXAMPLES";
    case Errc::DuplicateFacility: return "E_DUPLICATE_FACILITY";
    case Errc::IoFailure: return "E_IO_FAILURE";
    case Errc::EmptyContext: return "E_EMPTY_CONTEXT";
    case Errc::EmptySystemPrompt: return "E_EMPTY_SYSTEM_PROMPT";
    case Errc::UnsupportedRole: return "E_UNSUPPORTED_ROLE";
    case Errc::InvalidTemplate: return "E_INVALID_TEMPLATE";
    case Errc::InvalidMessage: return "E_INVALID_MESSAGE";
    case Errc::InvalidConfig: return "E_INVALID_CONFIG";
    case Errc::BackendUnavailable: return "E_BACKEND_UNAVAILABLE";
    case Errc::BackendRejected: return "E_BACKEND_REJECTED";
    case Errc::Timeout: return "E_TIMEOUT";
    case Errc::SplitViolation: return "E_SPLIT_VIOLATION";
    case Errc::Infeasible: return "E_INFEASIBLE";
    case Errc::InvalidProfile: return "E_INVALID_PROFILE";
    case Errc::InvalidAnnotation: return "E_INVALID_ANNOTATION";
    case Errc::EmptyAnnotation: return "E_EMPTY_ANNOTATION";
    case Errc::MissingCells: return "E_MISSING_CELLS";
    case Errc::NotFound: return "E_NOT_FOUND";
    case Errc::Conflict: return "E_CONFLICT";
    case Errc::NoRuns: return "E_NO_RUNS";
    case Errc::Unauthorized: return "E_UNAUTHORIZED";
    case Errc::Usage: return "E_USAGE";
  }
  return "E_UNKNOWN";
}

std::string Error::one_line() const {
  std::string line(code_name(code_));
  line += ": ";
  for (char c : std::string_view(what())) line += (c == '\n' ? ' ' : c);
  return line;
}

}  // namespace caleido
