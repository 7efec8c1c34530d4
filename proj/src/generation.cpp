#include "caleido/generation.hpp"

#include <atomic>
#include <cmath>
#include <ctime>
#include <thread>

#include "caleido/error.hpp"

namespace caleido {

using nlohmann::json;

void validate_config(const GenerationConfig& c) {
  if (c.model_id.empty()) throw Error(Errc::InvalidConfig, "model_id is empty", "/model_id");
  if (!(c.temperature >= 0) || !std::isfinite(c.temperature)) {
    throw Error(Errc::InvalidConfig, "temperature must be >= 0", "/temperature");
  }
  if (c.max_new_tokens < 1) {
    throw Error(Errc::InvalidConfig, "max_new_tokens must be >= 1", "/max_new_tokens");
  }
}

std::string make_run_id(std::string_view facility_id, std::string_view model_id, int repetition) {
  auto sanitize = [](std::string_view s) {
    std::string out;
    for (char c : s) {
      const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                      (c >= '0' && c <= '9') || c == '-' || c == '.';
      out += ok ? c : '_';
    }
    return out;
  };
  return sanitize(model_id) + "__" + sanitize(facility_id) + "__r" + std::to_string(repetition);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

// ---------------------------------------------------------------------------

json GenerationRequest::to_wire() const {
  json j{{"temperature", temperature}, {"max_new_tokens", max_new_tokens}};
  if (messages.empty()) {
    j["prompt"] = prompt;
  } else {
    json ms = json::array();
    for (const auto& m : messages) ms.push_back(to_json(m));
    j["messages"] = std::move(ms);
  }
  j["seed"] = seed ? json(*seed) : json(nullptr);
  return j;
}

GenerationRequest GenerationRequest::from_wire(const json& j) {
  try {
    GenerationRequest r;
    if (j.contains("messages")) {
      for (const auto& m : j.at("messages")) r.messages.push_back(message_from_json(m));
      if (r.messages.empty()) throw Error(Errc::InvalidMessage, "messages is empty", "/messages");
    } else {
      r.prompt = j.at("prompt").get<std::string>();
    }
    r.temperature = j.value("temperature", 0.7);
    r.max_new_tokens = j.value("max_new_tokens", 512);
    if (j.contains("seed") && !j["seed"].is_null()) r.seed = j["seed"].get<std::int64_t>();
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidMessage, std::string("bad generation request: ") + e.what());
  }
}

std::string EchoBackend::complete(const GenerationRequest& request) {
  std::string_view source = request.prompt;
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->role == ChatRole::User) {
      source = it->content;
      break;
    }
  }
  if (auto context = extract_context_section(source)) return *context;
  return std::string(source);
}

// ---------------------------------------------------------------------------

std::optional<GenerationRun> MemoryRunRegistry::find(const std::string& run_id) const {
  std::lock_guard lock(mu_);
  auto it = runs_.find(run_id);
  if (it == runs_.end()) return std::nullopt;
  return it->second;
}

GenerationRun MemoryRunRegistry::insert(const GenerationRun& run) {
  std::lock_guard lock(mu_);
  return runs_.emplace(run.run_id, run).first->second;
}

std::size_t MemoryRunRegistry::size() const {
  std::lock_guard lock(mu_);
  return runs_.size();
}

std::optional<GenerationRun> CollectionRunRegistry::find(const std::string& run_id) const {
  if (auto j = runs_.get(run_id)) return run_from_json(*j);
  return std::nullopt;
}

GenerationRun CollectionRunRegistry::insert(const GenerationRun& run) {
  return run_from_json(runs_.put_if_absent(run.run_id, to_json(run)).first);
}

// ---------------------------------------------------------------------------

GenerationRun generate(const PromptInput& prompt, const GenerationConfig& config,
                       GenerationBackend& backend, RunRegistry& registry,
                       std::string_view facility_id, int repetition, const RetryPolicy& retry) {
  validate_config(config);
  if (repetition < 1) throw Error(Errc::InvalidConfig, "repetition index starts at 1");
  const std::string run_id = make_run_id(facility_id, config.model_id, repetition);
  if (auto existing = registry.find(run_id)) return *existing;

  GenerationRequest request;
  request.prompt = prompt.text;
  request.messages = prompt.messages;
  request.temperature = config.temperature;
  request.max_new_tokens = config.max_new_tokens;
  // Repetitions of a seeded config get distinct but reproducible seeds.
  if (config.seed) request.seed = *config.seed + (repetition - 1);

  auto backoff = retry.initial_backoff;
  for (int attempt = 0;; ++attempt) {
    const auto started = std::chrono::steady_clock::now();
    try {
      std::string text = backend.complete(request);
      const auto elapsed = std::chrono::steady_clock::now() - started;
      GenerationRun run;
      run.run_id = run_id;
      run.facility_id = std::string(facility_id);
      run.model_id = config.model_id;
      run.repetition_index = repetition;
      run.prompt_text = prompt.text;
      run.output_text = std::move(text);
      run.latency_ms = std::chrono::duration<double, std::milli>(elapsed).count();
      run.created_at = utc_timestamp();
      return registry.insert(run);
    } catch (const Error& e) {
      const bool retryable = e.code() == Errc::BackendUnavailable || e.code() == Errc::Timeout;
      if (!retryable) throw;
      if (attempt >= retry.max_retries) {
        if (e.code() == Errc::Timeout) throw;
        throw Error(Errc::BackendUnavailable, std::string(e.what()) + " (after " +
                                                  std::to_string(retry.max_retries) +
                                                  " retries)");
      }
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(
          static_cast<std::int64_t>(static_cast<double>(backoff.count()) * retry.multiplier));
    }
  }
}

PromptInput build_prompt(const DatasetExample& example, const GenerationConfig& config,
                         std::string_view system_prompt) {
  PromptInput p;
  if (config.strategy == PromptStrategy::FineTuneInstruction) {
    p.text = render_finetune_prompt(example);
  } else {
    p.messages = render_chat_prompt(system_prompt, example.input, example.context);
    p.text = apply_chat_template(p.messages, load_template(config.chat_template));
  }
  return p;
}

ExperimentResult run_experiment(std::span<const DatasetExample> facilities,
                                const std::set<std::string>& train_facility_ids,
                                std::span<const GenerationConfig> models,
                                GenerationBackend& backend, RunRegistry& registry,
                                const ExperimentOptions& options) {
  for (const auto& f : facilities) {
    if (f.split == Split::Train || train_facility_ids.count(f.facility_id)) {
      throw Error(Errc::SplitViolation,
                  "facility '" + f.facility_id + "' belongs to the training split");
    }
  }
  if (options.repetitions < 1) throw Error(Errc::InvalidConfig, "repetitions must be >= 1");
  for (const auto& m : models) validate_config(m);

  struct Cell {
    std::size_t facility;
    std::size_t model;
    int repetition;
  };
  std::vector<Cell> cells;
  for (std::size_t f = 0; f < facilities.size(); ++f) {
    for (std::size_t m = 0; m < models.size(); ++m) {
      for (int r = 1; r <= options.repetitions; ++r) cells.push_back({f, m, r});
    }
  }

  // Prompts depend only on (facility, model); build them up front so template
  // errors surface before any backend call.
  std::vector<std::vector<PromptInput>> prompts(facilities.size());
  for (std::size_t f = 0; f < facilities.size(); ++f) {
    for (const auto& m : models) prompts[f].push_back(build_prompt(facilities[f], m, options.system_prompt));
  }

  std::vector<std::optional<GenerationRun>> runs(cells.size());
  std::vector<std::optional<CellFailure>> failures(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < cells.size(); k = next++) {
      const Cell& c = cells[k];
      const auto& example = facilities[c.facility];
      const auto& config = models[c.model];
      try {
        runs[k] = generate(prompts[c.facility][c.model], config, backend, registry,
                           example.facility_id, c.repetition, options.retry);
      } catch (const Error& e) {
        failures[k] = CellFailure{example.facility_id, config.model_id, c.repetition,
                                  std::string(code_name(e.code())), e.what()};
      }
    }
  };
  const auto workers = std::min<std::size_t>(
      static_cast<std::size_t>(std::max(1, options.max_in_flight)), std::max<std::size_t>(cells.size(), 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  ExperimentResult result;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (runs[k]) result.runs.push_back(std::move(*runs[k]));
    if (failures[k]) result.failures.push_back(std::move(*failures[k]));
  }
  return result;
}

// ---------------------------------------------------------------------------

json to_json(const GenerationConfig& c) {
  json j{{"model_id", c.model_id},
         {"temperature", c.temperature},
         {"max_new_tokens", c.max_new_tokens},
         {"strategy", std::string(strategy_name(c.strategy))},
         {"chat_template", c.chat_template}};
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  return j;
}

GenerationConfig config_from_json(const json& j) {
  try {
    GenerationConfig c;
    c.model_id = j.at("model_id").get<std::string>();
    c.temperature = j.value("temperature", c.temperature);
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::int64_t>();
    auto strategy = strategy_from_name(
        j.value("strategy", std::string(strategy_name(PromptStrategy::FineTuneInstruction))));
    if (!strategy) throw Error(Errc::InvalidConfig, "unknown strategy", "/strategy");
    c.strategy = *strategy;
    c.chat_template = j.value("chat_template", c.chat_template);
    validate_config(c);
    return c;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("bad generation config: ") + e.what());
  }
}

json to_json(const GenerationRun& r) {
  return json{{"run_id", r.run_id},
              {"facility_id", r.facility_id},
              {"model_id", r.model_id},
              {"repetition_index", r.repetition_index},
              {"prompt_text", r.prompt_text},
              {"output_text", r.output_text},
              {"latency_ms", r.latency_ms},
              {"created_at", r.created_at}};
}

GenerationRun run_from_json(const json& j) {
  try {
    GenerationRun r;
    r.run_id = j.at("run_id").get<std::string>();
    r.facility_id = j.at("facility_id").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    r.repetition_index = j.at("repetition_index").get<int>();
    r.prompt_text = j.at("prompt_text").get<std::string>();
    r.output_text = j.at("output_text").get<std::string>();
    r.latency_ms = j.value("latency_ms", 0.0);
    r.created_at = j.value("created_at", std::string());
    if (r.repetition_index < 1) throw Error(Errc::InvalidRecord, "repetition_index < 1");
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidRecord, std::string("bad generation run: ") + e.what());
  }
}

}  // namespace caleido
