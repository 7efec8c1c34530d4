#include "caleido/workbench.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>

#include "caleido/error.hpp"
#include "caleido/prompt.hpp"

namespace caleido {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string annotation_key(const std::string& run_id, const std::string& annotator) {
  return run_id + "\x1f" + annotator;
}

template <typename T, typename F>
std::vector<T> decode_all(const RecordCollection& c, F&& decode) {
  std::vector<T> out;
  for (const auto& j : c.all()) out.push_back(decode(j));
  return out;
}

}  // namespace

ExperimentSpec experiment_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::InvalidConfig, "experiment must be an object");
  ExperimentSpec s;
  if (!j.contains("models") || !j["models"].is_array() || j["models"].empty()) {
    throw Error(Errc::InvalidConfig, "models must be a non-empty list", "/models");
  }
  for (const auto& m : j["models"]) s.models.push_back(config_from_json(m));
  try {
    s.repetitions = j.value("repetitions", s.repetitions);
    s.max_in_flight = j.value("max_in_flight", s.max_in_flight);
    s.facility_ids = j.value("facility_ids", s.facility_ids);
    s.backend = j.value("backend", s.backend);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("bad experiment: ") + e.what());
  }
  if (s.repetitions < 1) throw Error(Errc::InvalidConfig, "repetitions must be >= 1", "/repetitions");
  if (s.max_in_flight < 1) {
    throw Error(Errc::InvalidConfig, "max_in_flight must be >= 1", "/max_in_flight");
  }
  return s;
}

json to_json(const ExperimentSpec& s) {
  json models = json::array();
  for (const auto& m : s.models) models.push_back(to_json(m));
  return json{{"models", std::move(models)},
              {"repetitions", s.repetitions},
              {"max_in_flight", s.max_in_flight},
              {"facility_ids", s.facility_ids},
              {"backend", s.backend}};
}

json to_json(const ExperimentResult& r) {
  json runs = json::array();
  for (const auto& run : r.runs) runs.push_back(run.run_id);
  json failures = json::array();
  for (const auto& f : r.failures) {
    failures.push_back({{"facility_id", f.facility_id},
                        {"model_id", f.model_id},
                        {"repetition_index", f.repetition_index},
                        {"code", f.code},
                        {"message", f.message}});
  }
  return json{{"runs", std::move(runs)}, {"failures", std::move(failures)}};
}

std::unique_ptr<GenerationBackend> make_backend(std::string_view name) {
  if (name == "echo") return std::make_unique<EchoBackend>();
  if (name == "http") return std::make_unique<HttpBackend>(HttpBackend::options_from_env());
  throw Error(Errc::InvalidConfig, "unknown backend '" + std::string(name) + "'", "/backend");
}

// ---------------------------------------------------------------------------

fs::path Workspace::default_root() {
  if (const char* env = std::getenv("CALEIDO_WORKSPACE"); env && *env) return env;
  return fs::current_path() / "caleido-workspace";
}

Workspace::Workspace(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create workspace " + root_.string() + ": " + ec.message());
  const fs::path meta = root_ / "workspace.json";
  if (fs::exists(meta)) {
    try {
      schema_version_ = json::parse(read_file(meta)).at("schema_version").get<int>();
    } catch (const json::exception& e) {
      throw Error(Errc::IoFailure, "corrupt workspace.json: " + std::string(e.what()));
    }
    if (schema_version_ > kSchemaVersion) {
      throw Error(Errc::InvalidConfig, "workspace schema " + std::to_string(schema_version_) +
                                           " is newer than supported " +
                                           std::to_string(kSchemaVersion));
    }
  }
  if (!fs::exists(meta) || schema_version_ < kSchemaVersion) {
    schema_version_ = kSchemaVersion;
    write_file_atomic(meta, json{{"schema_version", schema_version_}}.dump(2) + "\n");
  }
  auto open = [&](const char* name) {
    return std::make_unique<RecordCollection>(root_ / (std::string(name) + ".jsonl"));
  };
  providers_ = open("providers");
  provider_records_ = open("provider_records");
  facilities_ = open("facilities");
  contexts_ = open("contexts");
  references_ = open("references");
  datasets_ = open("datasets");
  runs_ = open("runs");
  annotations_ = open("annotations");
  reports_ = open("reports");
}

// ---------------------------------------------------------------------------

ProviderDescriptor Workspace::add_provider(const ProviderDescriptor& d) {
  validate_descriptor(d);
  std::lock_guard lock(write_mu_);
  for (const auto& other : providers()) {
    if (other.provider_id != d.provider_id && other.priority == 1 && d.priority == 1) {
      throw Error(Errc::Conflict, "provider '" + other.provider_id + "' is already primary",
                  "/priority");
    }
  }
  providers_->put(d.provider_id, to_json(d));
  return d;
}

std::vector<ProviderDescriptor> Workspace::providers() const {
  return decode_all<ProviderDescriptor>(*providers_, descriptor_from_json);
}

IngestSummary Workspace::ingest(const std::string& provider_id, std::string_view payload) {
  std::lock_guard lock(write_mu_);
  const auto stored = providers_->get(provider_id);
  if (!stored) throw Error(Errc::NotFound, "unknown provider '" + provider_id + "'", "/provider_id");
  const ProviderDescriptor descriptor = descriptor_from_json(*stored);
  auto parsed = parse_catalog(payload, descriptor);

  // The new payload replaces everything this provider sent before.
  std::vector<std::pair<std::string, json>> kept;
  for (const auto& j : provider_records_->all()) {
    if (j.at("provider_id").get<std::string>() != provider_id) {
      kept.emplace_back(j.at("provider_id").get<std::string>() + "/" +
                            j.at("facility_id").get<std::string>(),
                        j);
    }
  }
  for (auto& r : parsed) {
    r = clean_record(std::move(r));
    validate_record(r);
    kept.emplace_back(provider_id + "/" + r.facility_id, to_json(r));
  }
  provider_records_->replace_all(kept);

  IngestSummary summary;
  summary.provider_id = provider_id;
  summary.records = parsed.size();
  rebuild_facilities_locked();
  summary.facilities = facilities_->size();
  summary.contexts = contexts_->size();
  return summary;
}

void Workspace::rebuild_facilities_locked() {
  const auto descriptors = providers();
  const auto records = decode_all<FacilityRecord>(*provider_records_, record_from_json);
  const auto merged = merge_all(records, descriptors);
  const FieldMapping mapping = combined_mapping(descriptors);

  // Facilities posted directly (not owned by a registered provider) survive a
  // rebuild; everything else is recomputed from the provider records.
  std::set<std::string> registered;
  for (const auto& d : descriptors) registered.insert(d.provider_id);
  std::vector<std::pair<std::string, json>> facilities, contexts;
  for (const auto& j : facilities_->all()) {
    if (!registered.count(j.at("provider_id").get<std::string>())) {
      const auto id = j.at("facility_id").get<std::string>();
      facilities.emplace_back(id, j);
      if (auto c = contexts_->get(id)) contexts.emplace_back(id, *c);
    }
  }
  for (const auto& f : merged) {
    facilities.emplace_back(f.facility_id, to_json(f));
    try {
      contexts.emplace_back(f.facility_id, to_json(build_context(f, mapping)));
    } catch (const Error& e) {
      if (e.code() != Errc::NoFeatures) throw;
    }
  }
  facilities_->replace_all(facilities);
  contexts_->replace_all(contexts);
}

std::vector<FacilityRecord> Workspace::facilities() const {
  return decode_all<FacilityRecord>(*facilities_, record_from_json);
}

FacilityRecord Workspace::facility(const std::string& facility_id) const {
  auto j = facilities_->get(facility_id);
  if (!j) throw Error(Errc::NotFound, "unknown facility '" + facility_id + "'");
  return record_from_json(*j);
}

FacilityRecord Workspace::put_facility(FacilityRecord record) {
  if (record.cleaned_fields.empty() && !record.raw_fields.empty()) record = clean_record(std::move(record));
  validate_record(record);
  std::lock_guard lock(write_mu_);
  if (auto existing = facilities_->get(record.facility_id)) {
    if (record_from_json(*existing) == record) return record;
    throw Error(Errc::Conflict, "facility '" + record.facility_id + "' already exists",
                "/facility_id");
  }
  facilities_->put(record.facility_id, to_json(record));
  const auto descriptors = providers();
  try {
    contexts_->put(record.facility_id, to_json(build_context(record, combined_mapping(descriptors))));
  } catch (const Error& e) {
    if (e.code() != Errc::NoFeatures) throw;
  }
  return record;
}

// ---------------------------------------------------------------------------

ContextDocument Workspace::context(const std::string& facility_id) {
  if (auto j = contexts_->get(facility_id)) return context_from_json(*j);
  const FacilityRecord record = facility(facility_id);
  ContextDocument doc = build_context(record, combined_mapping(providers()));
  contexts_->put(facility_id, to_json(doc));
  return doc;
}

std::vector<ContextDocument> Workspace::contexts() const {
  return decode_all<ContextDocument>(*contexts_, context_from_json);
}

// ---------------------------------------------------------------------------

void Workspace::put_references(const std::map<std::string, std::string>& references) {
  std::lock_guard lock(write_mu_);
  std::vector<std::pair<std::string, json>> all;
  std::map<std::string, std::string> merged;
  for (const auto& j : references_->all()) {
    merged[j.at("facility_id").get<std::string>()] = j.at("text").get<std::string>();
  }
  for (const auto& [id, text] : references) {
    if (text.empty()) throw Error(Errc::MissingReference, "empty reference for '" + id + "'");
    merged[id] = text;
  }
  for (const auto& [id, text] : merged) {
    all.emplace_back(id, json{{"facility_id", id}, {"text", text}});
  }
  references_->replace_all(all);
}

SplitResult Workspace::split(std::size_t train_count, std::uint64_t seed) {
  std::lock_guard lock(write_mu_);
  std::vector<DatasetExample> pool;
  for (const auto& f : facilities()) {
    auto ctx = contexts_->get(f.facility_id);
    if (!ctx) continue;
    std::optional<std::string> reference;
    if (auto r = references_->get(f.facility_id)) reference = r->at("text").get<std::string>();
    pool.push_back(build_example(f, context_from_json(*ctx), reference, Split::Test));
  }
  SplitResult result = split_dataset(pool, train_count, seed);
  std::vector<std::pair<std::string, json>> rows;
  for (const auto* part : {&result.train, &result.test}) {
    for (const auto& e : *part) rows.emplace_back(e.facility_id, to_json(e));
  }
  datasets_->replace_all(rows);
  return result;
}

std::vector<DatasetExample> Workspace::examples(std::optional<Split> split) const {
  std::vector<DatasetExample> out;
  for (const auto& j : datasets_->all()) {
    auto e = example_from_json(j);
    if (!split || e.split == *split) out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------

ExperimentResult Workspace::run_experiment(const ExperimentSpec& spec, GenerationBackend& backend,
                                           const RetryPolicy& retry) {
  const auto stored = examples();
  std::set<std::string> train_ids;
  for (const auto& e : stored) {
    if (e.split == Split::Train) train_ids.insert(e.facility_id);
  }
  std::vector<DatasetExample> targets;
  if (spec.facility_ids.empty()) {
    for (const auto& e : stored) {
      if (e.split == Split::Test) targets.push_back(e);
    }
    if (targets.empty()) {
      throw Error(Errc::NotFound, "no test split in the workspace; split the dataset first");
    }
  } else {
    for (const auto& id : spec.facility_ids) {
      if (train_ids.count(id)) {
        throw Error(Errc::SplitViolation, "facility '" + id + "' belongs to the training split");
      }
      auto it = std::find_if(stored.begin(), stored.end(),
                             [&](const DatasetExample& e) { return e.facility_id == id; });
      if (it != stored.end()) {
        targets.push_back(*it);
      } else {
        targets.push_back(build_example(facility(id), context(id), std::nullopt, Split::Test));
      }
    }
  }

  ExperimentOptions options;
  options.repetitions = spec.repetitions;
  options.max_in_flight = spec.max_in_flight;
  options.retry = retry;
  const bool chat = std::any_of(spec.models.begin(), spec.models.end(), [](const GenerationConfig& m) {
    return m.strategy == PromptStrategy::SystemPromptChat;
  });
  if (chat) options.system_prompt = load_system_prompt();
  CollectionRunRegistry registry(*runs_);
  return caleido::run_experiment(targets, train_ids, spec.models, backend, registry, options);
}

std::vector<GenerationRun> Workspace::runs(const std::optional<std::string>& model_id) const {
  std::vector<GenerationRun> out;
  for (const auto& j : runs_->all()) {
    auto r = run_from_json(j);
    if (!model_id || r.model_id == *model_id) out.push_back(std::move(r));
  }
  return out;
}

GenerationRun Workspace::run(const std::string& run_id) const {
  auto j = runs_->get(run_id);
  if (!j) throw Error(Errc::NotFound, "unknown run '" + run_id + "'");
  return run_from_json(*j);
}

// ---------------------------------------------------------------------------

ContextDocument Workspace::context_for_run(const GenerationRun& run) const {
  auto j = contexts_->get(run.facility_id);
  if (!j) throw Error(Errc::NotFound, "no context for facility '" + run.facility_id + "'");
  return context_from_json(*j);
}

AnnotationRecord Workspace::annotate(AnnotationRecord annotation) {
  const GenerationRun r = run(annotation.run_id);
  validate_annotation(annotation, context_for_run(r), r.output_text);
  if (annotation.completed_at.empty()) annotation.completed_at = utc_timestamp();
  std::lock_guard lock(write_mu_);
  const json stored = annotations_->update(
      annotation_key(annotation.run_id, annotation.annotator),
      [&](const std::optional<json>& current) {
        const std::uint64_t have = current ? current->value("version", std::uint64_t{0}) : 0;
        if (current) {
          AnnotationRecord prior = annotation_from_json(*current);
          if (prior.description_features == annotation.description_features) return *current;
        }
        if (annotation.version != have) {
          throw Error(Errc::Conflict,
                      "annotation by '" + annotation.annotator + "' is at version " +
                          std::to_string(have) + ", submit was based on " +
                          std::to_string(annotation.version),
                      "/version");
        }
        annotation.version = have + 1;
        return to_json(annotation);
      });
  return annotation_from_json(stored);
}

std::vector<AnnotationRecord> Workspace::annotations(const std::string& run_id) const {
  run(run_id);
  std::vector<AnnotationRecord> out;
  for (const auto& j : annotations_->all()) {
    if (j.at("run_id").get<std::string>() == run_id) out.push_back(annotation_from_json(j));
  }
  std::sort(out.begin(), out.end(),
            [](const AnnotationRecord& a, const AnnotationRecord& b) { return a.annotator < b.annotator; });
  return out;
}

std::vector<AnnotationRecord> Workspace::auto_annotate(const std::optional<std::string>& model_id,
                                                       double threshold) {
  std::lock_guard lock(write_mu_);
  std::vector<AnnotationRecord> out;
  std::vector<std::pair<std::string, json>> rows;
  for (const auto& j : annotations_->all()) {
    rows.emplace_back(annotation_key(j.at("run_id").get<std::string>(),
                                     j.at("annotator").get<std::string>()),
                      j);
  }
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < rows.size(); ++i) position[rows[i].first] = i;
  const std::string stamp = utc_timestamp();
  for (const auto& r : runs(model_id)) {
    const ContextDocument ctx = context_for_run(r);
    AnnotationRecord a = auto_match(ctx, r.output_text, threshold);
    a.run_id = r.run_id;
    a.completed_at = stamp;
    validate_annotation(a, ctx, r.output_text);
    const std::string key = annotation_key(a.run_id, a.annotator);
    if (auto it = position.find(key); it != position.end()) {
      a.version = rows[it->second].second.value("version", std::uint64_t{0}) + 1;
      rows[it->second].second = to_json(a);
    } else {
      a.version = 1;
      position[key] = rows.size();
      rows.emplace_back(key, to_json(a));
    }
    out.push_back(std::move(a));
  }
  annotations_->replace_all(rows);
  return out;
}

RunMetrics Workspace::metrics(const AnnotationRecord& annotation) const {
  const GenerationRun r = run(annotation.run_id);
  return compute_metrics(annotation, context_for_run(r), r.output_text);
}

ModelReport Workspace::report(const std::string& model_id,
                              const std::optional<std::string>& annotator) {
  const auto model_runs = runs(model_id);
  if (model_runs.empty()) throw Error(Errc::NoRuns, "no runs for model '" + model_id + "'");
  std::map<std::string, FacilityRuns> by_facility;
  for (const auto& r : model_runs) {
    const auto records = annotations(r.run_id);
    const AnnotationRecord* chosen = nullptr;
    for (const auto& a : records) {
      if (annotator ? a.annotator == *annotator : a.annotator != kAutoAnnotator) {
        chosen = &a;
        break;
      }
    }
    if (!chosen && !annotator) {
      for (const auto& a : records) {
        if (a.annotator == kAutoAnnotator) chosen = &a;
      }
    }
    if (!chosen) {
      throw Error(Errc::MissingCells, "run '" + r.run_id + "' has no annotation" +
                                          (annotator ? " by '" + *annotator + "'" : std::string()));
    }
    auto& cell = by_facility[r.facility_id];
    cell.facility_id = r.facility_id;
    cell.repetitions.push_back(compute_metrics(*chosen, context_for_run(r), r.output_text));
  }
  std::vector<FacilityRuns> cells;
  for (auto& [_, f] : by_facility) cells.push_back(std::move(f));
  ModelReport report = aggregate(cells, model_id);
  const std::vector<ModelReport> one{report};
  reports_->put(model_id, json{{"report", to_json(report)}, {"table", render_report_table(one)}});
  return report;
}

std::string Workspace::report_text(const std::string& model_id,
                                   const std::optional<std::string>& annotator) {
  const std::vector<ModelReport> one{report(model_id, annotator)};
  return render_report_table(one);
}

}  // namespace caleido
