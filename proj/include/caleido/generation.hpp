#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "caleido/dataset.hpp"
#include "caleido/prompt.hpp"
#include "caleido/store.hpp"
#include "json.hpp"

namespace caleido {

struct GenerationConfig {
  std::string model_id;
  double temperature = 0.7;
  int max_new_tokens = 512;
  std::optional<std::int64_t> seed;
  PromptStrategy strategy = PromptStrategy::FineTuneInstruction;
  // Chat template used to record the prompt text of chat runs.
  std::string chat_template = "mixtral-system";

  bool operator==(const GenerationConfig&) const = default;
};

/// Throws InvalidConfig.
void validate_config(const GenerationConfig& c);

struct GenerationRun {
  std::string run_id;
  std::string facility_id;
  std::string model_id;
  int repetition_index = 1;
  std::string prompt_text;
  std::string output_text;  // verbatim backend text
  double latency_ms = 0;
  std::string created_at;  // ISO-8601 UTC

  bool operator==(const GenerationRun&) const = default;
};

/// Idempotency key of a cell: one run per (facility, model, repetition).
std::string make_run_id(std::string_view facility_id, std::string_view model_id, int repetition);

// ---------------------------------------------------------------------------
// Backend seam

/// What goes over the wire: either a plain prompt or chat messages.
struct GenerationRequest {
  std::string prompt;
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  int max_new_tokens = 512;
  std::optional<std::int64_t> seed;

  /// {"prompt"|"messages", "temperature", "max_new_tokens", "seed"}
  nlohmann::json to_wire() const;
  static GenerationRequest from_wire(const nlohmann::json& j);
};

/// Implementations throw Error with BackendUnavailable or Timeout for
/// retryable failures and BackendRejected for permanent ones.
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual std::string complete(const GenerationRequest& request) = 0;
};

/// Deterministic mock: returns the context section of the prompt (or of the
/// last user message) verbatim, else the prompt itself.
class EchoBackend : public GenerationBackend {
 public:
  std::string complete(const GenerationRequest& request) override;
};

struct HttpBackendOptions {
  std::string base_url;  // "http://host:port"
  std::string path = "/generate";
  std::string bearer_token;
  std::chrono::milliseconds connect_timeout{2000};
  std::chrono::milliseconds read_timeout{120000};
};

/// POSTs GenerationRequest::to_wire() and reads {"text": ...} back.
class HttpBackend : public GenerationBackend {
 public:
  explicit HttpBackend(HttpBackendOptions options);
  /// Base URL from CALEIDO_BACKEND_URL, token from CALEIDO_BACKEND_TOKEN.
  static HttpBackendOptions options_from_env();

  std::string complete(const GenerationRequest& request) override;

 private:
  HttpBackendOptions options_;
};

/// Serves the backend wire contract over HTTP in a background thread, with
/// any GenerationBackend behind it. Used by tests and `caleido serve`.
class BackendServer {
 public:
  explicit BackendServer(std::shared_ptr<GenerationBackend> backend);
  ~BackendServer();
  BackendServer(const BackendServer&) = delete;
  BackendServer& operator=(const BackendServer&) = delete;

  /// Binds 127.0.0.1:port (0 = ephemeral) and returns the bound port.
  int start(int port = 0);
  void stop();
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Run registry

class RunRegistry {
 public:
  virtual ~RunRegistry() = default;
  virtual std::optional<GenerationRun> find(const std::string& run_id) const = 0;
  /// Stores `run` unless one with the same id exists; returns the stored run.
  virtual GenerationRun insert(const GenerationRun& run) = 0;
};

class MemoryRunRegistry : public RunRegistry {
 public:
  std::optional<GenerationRun> find(const std::string& run_id) const override;
  GenerationRun insert(const GenerationRun& run) override;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, GenerationRun> runs_;
};

class CollectionRunRegistry : public RunRegistry {
 public:
  explicit CollectionRunRegistry(RecordCollection& runs) : runs_(runs) {}
  std::optional<GenerationRun> find(const std::string& run_id) const override;
  GenerationRun insert(const GenerationRun& run) override;

 private:
  RecordCollection& runs_;
};

// ---------------------------------------------------------------------------
// Generation

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 2.0;
};

struct PromptInput {
  std::string text;                   // recorded as prompt_text
  std::vector<ChatMessage> messages;  // sent instead of text when non-empty
};

/// Runs one cell. An existing run with the same idempotency key is returned
/// without calling the backend. Transport and timeout failures are retried
/// with exponential backoff; BackendRejected is not.
GenerationRun generate(const PromptInput& prompt, const GenerationConfig& config,
                       GenerationBackend& backend, RunRegistry& registry,
                       std::string_view facility_id, int repetition,
                       const RetryPolicy& retry = {});

/// Builds the prompt for `example` under the config's strategy.
PromptInput build_prompt(const DatasetExample& example, const GenerationConfig& config,
                         std::string_view system_prompt);

struct CellFailure {
  std::string facility_id;
  std::string model_id;
  int repetition_index = 0;
  std::string code;
  std::string message;
};

struct ExperimentOptions {
  int repetitions = 5;
  int max_in_flight = 4;
  RetryPolicy retry;
  std::string system_prompt;  // required for chat strategies
};

struct ExperimentResult {
  std::vector<GenerationRun> runs;  // facility-major, then model, then repetition
  std::vector<CellFailure> failures;
};

/// Every (facility, model, repetition) cell, at most max_in_flight at once.
/// Throws SplitViolation when a facility is in the training split.
ExperimentResult run_experiment(std::span<const DatasetExample> facilities,
                                const std::set<std::string>& train_facility_ids,
                                std::span<const GenerationConfig> models,
                                GenerationBackend& backend, RunRegistry& registry,
                                const ExperimentOptions& options = {});

nlohmann::json to_json(const GenerationConfig& c);
GenerationConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GenerationRun& r);
GenerationRun run_from_json(const nlohmann::json& j);

std::string utc_timestamp();

}  // namespace caleido
