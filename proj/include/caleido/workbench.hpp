#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "caleido/catalog.hpp"
#include "caleido/context.hpp"
#include "caleido/dataset.hpp"
#include "caleido/evaluation.hpp"
#include "caleido/generation.hpp"
#include "caleido/store.hpp"
#include "json.hpp"

namespace caleido {

struct IngestSummary {
  std::string provider_id;
  std::size_t records = 0;     // parsed from this payload
  std::size_t facilities = 0;  // merged facilities in the workspace afterwards
  std::size_t contexts = 0;    // contexts rebuilt
};

struct ExperimentSpec {
  std::vector<GenerationConfig> models;
  int repetitions = 5;
  int max_in_flight = 4;
  std::vector<std::string> facility_ids;  // empty = the stored test split
  std::string backend = "echo";           // "echo" or "http"
};

ExperimentSpec experiment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentSpec& s);
nlohmann::json to_json(const ExperimentResult& r);

/// File-backed workspace shared by the CLI and the HTTP service.
///
/// Layout: workspace.json plus one JSONL collection per record type
/// (providers, provider_records, facilities, contexts, references, datasets,
/// runs, annotations, reports).
class Workspace {
 public:
  static constexpr int kSchemaVersion = 1;

  explicit Workspace(std::filesystem::path root);

  /// CALEIDO_WORKSPACE, else ./caleido-workspace.
  static std::filesystem::path default_root();

  const std::filesystem::path& root() const { return root_; }
  int schema_version() const { return schema_version_; }

  // Providers and catalogs
  ProviderDescriptor add_provider(const ProviderDescriptor& d);
  std::vector<ProviderDescriptor> providers() const;
  IngestSummary ingest(const std::string& provider_id, std::string_view payload);

  std::vector<FacilityRecord> facilities() const;
  FacilityRecord facility(const std::string& facility_id) const;
  /// Stores an already merged record. Conflict when a different record with
  /// the same id exists.
  FacilityRecord put_facility(FacilityRecord record);

  // Contexts
  ContextDocument context(const std::string& facility_id);
  std::vector<ContextDocument> contexts() const;

  // Dataset
  void put_references(const std::map<std::string, std::string>& references);
  /// Builds one example per facility with a context, splits them and stores
  /// the result (replacing any previous split).
  SplitResult split(std::size_t train_count, std::uint64_t seed);
  std::vector<DatasetExample> examples(std::optional<Split> split = std::nullopt) const;

  // Generation
  ExperimentResult run_experiment(const ExperimentSpec& spec, GenerationBackend& backend,
                                  const RetryPolicy& retry = {});
  std::vector<GenerationRun> runs(const std::optional<std::string>& model_id = std::nullopt) const;
  GenerationRun run(const std::string& run_id) const;

  // Evaluation
  /// Validates against the run's context and output, stamps completed_at if
  /// empty and stores it under (run_id, annotator). `version` must equal the
  /// stored revision (0 when none) or Conflict is thrown; resubmitting the
  /// stored features is a no-op. Returns the stored record.
  AnnotationRecord annotate(AnnotationRecord annotation);
  std::vector<AnnotationRecord> annotations(const std::string& run_id) const;
  /// auto_match for every run (optionally one model); replaces earlier
  /// automatic annotations.
  std::vector<AnnotationRecord> auto_annotate(const std::optional<std::string>& model_id = std::nullopt,
                                              double threshold = kDefaultMatchThreshold);
  RunMetrics metrics(const AnnotationRecord& annotation) const;

  /// Aggregates the model's runs. Each run uses its human annotation if one
  /// exists (first annotator by name), else the automatic one; `annotator`
  /// forces a specific one. Throws NoRuns or MissingCells.
  ModelReport report(const std::string& model_id,
                     const std::optional<std::string>& annotator = std::nullopt);
  /// render_report_table of report(); stored with the structured report.
  std::string report_text(const std::string& model_id,
                          const std::optional<std::string>& annotator = std::nullopt);

 private:
  ContextDocument context_for_run(const GenerationRun& run) const;
  void rebuild_facilities_locked();

  std::filesystem::path root_;
  int schema_version_ = kSchemaVersion;
  std::unique_ptr<RecordCollection> providers_;
  std::unique_ptr<RecordCollection> provider_records_;
  std::unique_ptr<RecordCollection> facilities_;
  std::unique_ptr<RecordCollection> contexts_;
  std::unique_ptr<RecordCollection> references_;
  std::unique_ptr<RecordCollection> datasets_;
  std::unique_ptr<RecordCollection> runs_;
  std::unique_ptr<RecordCollection> annotations_;
  std::unique_ptr<RecordCollection> reports_;
  // Serializes multi-collection updates; single reads go straight to the
  // collections.
  mutable std::mutex write_mu_;
};

/// Backend by name: "echo" or "http" (configured from the environment).
std::unique_ptr<GenerationBackend> make_backend(std::string_view name);

}  // namespace caleido
