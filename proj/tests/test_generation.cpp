#include <doctest.h>

#include <atomic>
#include <thread>

#include "caleido/error.hpp"
#include "caleido/generation.hpp"
#include "support.hpp"

using namespace caleido;
using namespace std::chrono_literals;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected caleido::Error");
  return Errc::Usage;
}

std::vector<DatasetExample> test_examples(std::size_t n) {
  std::vector<DatasetExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = "F" + std::to_string(i);
    out.push_back({"Write me a hotel brochure for the hotel H" + id + " in Rome.",
                   "Recreation: Pool " + id + "; Dining: Bar", "", id, Split::Test});
  }
  return out;
}

// Fails the first `failures` calls with `code`, then echoes.
class FlakyBackend : public GenerationBackend {
 public:
  FlakyBackend(int failures, Errc code) : remaining_(failures), code_(code) {}
  std::string complete(const GenerationRequest& r) override {
    ++calls;
    if (remaining_-- > 0) throw Error(code_, "flaky");
    return echo_.complete(r);
  }
  std::atomic<int> calls{0};

 private:
  std::atomic<int> remaining_;
  Errc code_;
  EchoBackend echo_;
};

class CountingBackend : public GenerationBackend {
 public:
  std::string complete(const GenerationRequest& r) override {
    const int now = ++in_flight;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(2ms);
    --in_flight;
    ++calls;
    std::lock_guard lock(mu);
    seeds.push_back(r.seed);
    return "ok";
  }
  std::atomic<int> in_flight{0}, peak{0}, calls{0};
  std::mutex mu;
  std::vector<std::optional<std::int64_t>> seeds;
};

const RetryPolicy kFastRetry{3, 1ms, 2.0};

}  // namespace

TEST_SUITE("generation") {

TEST_CASE("echo backend returns the context verbatim") {
  EchoBackend echo;
  const auto ex = test_examples(1)[0];
  GenerationConfig ft{"m"};
  CHECK(echo.complete({build_prompt(ex, ft, "").text}) == ex.context);
  GenerationConfig chat{"m"};
  chat.strategy = PromptStrategy::SystemPromptChat;
  const auto p = build_prompt(ex, chat, "Be brief.");
  GenerationRequest req;
  req.messages = p.messages;
  CHECK(echo.complete(req) == ex.context);
  CHECK(p.text.rfind("<<SYS>>\nBe brief.", 0) == 0);
  CHECK(echo.complete({"no context"}) == "no context");
}

TEST_CASE("run ids are the idempotency key") {
  CHECK(make_run_id("NW-001", "mistral-7b-ft", 3) == "mistral-7b-ft__NW-001__r3");
  CHECK(make_run_id("a/b", "m x", 1) == "m_x__a_b__r1");
  MemoryRunRegistry reg;
  CountingBackend backend;
  GenerationConfig c{"m"};
  const auto first = generate({"p"}, c, backend, reg, "F", 1);
  const auto again = generate({"p"}, c, backend, reg, "F", 1);
  CHECK(first == again);
  CHECK(backend.calls == 1);
  CHECK(code_of([&] { generate({"p"}, c, backend, reg, "F", 0); }) == Errc::InvalidConfig);
}

TEST_CASE("retryable failures are retried, permanent ones are not") {
  MemoryRunRegistry reg;
  GenerationConfig c{"m"};
  FlakyBackend two(2, Errc::BackendUnavailable);
  CHECK(generate({"p"}, c, two, reg, "F", 1, kFastRetry).output_text == "p");
  CHECK(two.calls == 3);

  FlakyBackend many(10, Errc::BackendUnavailable);
  CHECK(code_of([&] { generate({"p"}, c, many, reg, "G", 1, kFastRetry); }) == Errc::BackendUnavailable);
  CHECK(many.calls == 4);

  FlakyBackend slow(10, Errc::Timeout);
  CHECK(code_of([&] { generate({"p"}, c, slow, reg, "H", 1, kFastRetry); }) == Errc::Timeout);
  CHECK(slow.calls == 4);

  FlakyBackend rejected(1, Errc::BackendRejected);
  CHECK(code_of([&] { generate({"p"}, c, rejected, reg, "I", 1, kFastRetry); }) == Errc::BackendRejected);
  CHECK(rejected.calls == 1);
  CHECK(reg.size() == 1);
}

TEST_CASE("config validation and JSON") {
  GenerationConfig c{"m"};
  CHECK_NOTHROW(validate_config(c));
  auto bad = c;
  bad.model_id.clear();
  CHECK(code_of([&] { validate_config(bad); }) == Errc::InvalidConfig);
  bad = c;
  bad.temperature = -0.1;
  CHECK(code_of([&] { validate_config(bad); }) == Errc::InvalidConfig);
  bad = c;
  bad.max_new_tokens = 0;
  CHECK(code_of([&] { validate_config(bad); }) == Errc::InvalidConfig);
  c.seed = 42;
  c.strategy = PromptStrategy::SystemPromptChat;
  CHECK(config_from_json(to_json(c)) == c);
  CHECK(code_of([] { config_from_json({{"model_id", "m"}, {"strategy", "zero-shot"}}); }) == Errc::InvalidConfig);

  GenerationRun r{"id", "F", "m", 2, "p", "o", 1.5, "2024-01-01T00:00:00.000Z"};
  CHECK(run_from_json(to_json(r)) == r);

  GenerationRequest req;
  req.messages = {{ChatRole::User, "hi"}};
  req.seed = 7;
  const auto back = GenerationRequest::from_wire(req.to_wire());
  CHECK(back.messages == req.messages);
  CHECK(back.seed == req.seed);
}

TEST_CASE("experiment covers every cell with bounded concurrency") {
  const auto facilities = test_examples(6);
  std::vector<GenerationConfig> models{{"a"}, {"b"}};
  models[0].seed = 100;
  CountingBackend backend;
  MemoryRunRegistry reg;
  ExperimentOptions opts;
  opts.repetitions = 3;
  opts.max_in_flight = 2;
  opts.system_prompt = "s";
  const auto result = run_experiment(facilities, {}, models, backend, reg, opts);
  CHECK(result.failures.empty());
  REQUIRE(result.runs.size() == 36);
  CHECK(backend.calls == 36);
  CHECK(backend.peak <= 2);
  CHECK(result.runs[0].facility_id == "F0");
  CHECK(result.runs[0].model_id == "a");
  CHECK(result.runs[2].repetition_index == 3);
  CHECK(result.runs[3].model_id == "b");

  std::set<std::int64_t> seeds;
  std::size_t unseeded = 0;
  for (const auto& s : backend.seeds) s ? (void)seeds.insert(*s) : (void)++unseeded;
  CHECK(seeds == std::set<std::int64_t>{100, 101, 102});
  CHECK(unseeded == 18);

  // Re-running the same grid is a no-op for the backend.
  const auto again = run_experiment(facilities, {}, models, backend, reg, opts);
  CHECK(backend.calls == 36);
  CHECK(again.runs == result.runs);
}

TEST_CASE("failed cells are reported without aborting the grid") {
  const auto facilities = test_examples(3);
  std::vector<GenerationConfig> models{{"a"}};
  FlakyBackend backend(1, Errc::BackendRejected);
  MemoryRunRegistry reg;
  ExperimentOptions opts;
  opts.repetitions = 2;
  opts.max_in_flight = 1;
  const auto result = run_experiment(facilities, {}, models, backend, reg, opts);
  CHECK(result.runs.size() == 5);
  REQUIRE(result.failures.size() == 1);
  CHECK(result.failures[0].code == "E_BACKEND_REJECTED");
}

TEST_CASE("training facilities are refused") {
  auto facilities = test_examples(3);
  std::vector<GenerationConfig> models{{"a"}};
  EchoBackend echo;
  MemoryRunRegistry reg;
  CHECK(code_of([&] { run_experiment(facilities, {"F1"}, models, echo, reg); }) == Errc::SplitViolation);
  facilities[2].split = Split::Train;
  CHECK(code_of([&] { run_experiment(facilities, {}, models, echo, reg); }) == Errc::SplitViolation);
  CHECK(reg.size() == 0);
}

TEST_CASE("chat strategy needs a system prompt and a system-capable template") {
  const auto facilities = test_examples(1);
  std::vector<GenerationConfig> models{{"a"}};
  models[0].strategy = PromptStrategy::SystemPromptChat;
  EchoBackend echo;
  MemoryRunRegistry reg;
  CHECK(code_of([&] { run_experiment(facilities, {}, models, echo, reg); }) == Errc::EmptySystemPrompt);
  ExperimentOptions opts;
  opts.system_prompt = "s";
  models[0].chat_template = "mixtral-stock";
  CHECK(code_of([&] { run_experiment(facilities, {}, models, echo, reg, opts); }) == Errc::UnsupportedRole);
  CHECK(reg.size() == 0);
}

TEST_CASE("HTTP backend against the local backend server") {
  BackendServer server(std::make_shared<EchoBackend>());
  server.start();
  HttpBackendOptions o;
  o.base_url = server.base_url();
  HttpBackend http(o);
  GenerationRequest req;
  req.prompt = "### Context:\nRecreation: Pool\n\n### Output:\n";
  CHECK(http.complete(req) == "Recreation: Pool");
  req.prompt.clear();
  req.messages = {{ChatRole::System, "s"}, {ChatRole::User, "x\n\nContext: Dining: Bar"}};
  CHECK(http.complete(req) == "Dining: Bar");

  BackendServer rejecting(std::make_shared<FlakyBackend>(100, Errc::BackendRejected));
  rejecting.start();
  o.base_url = rejecting.base_url();
  CHECK(code_of([&] { HttpBackend(o).complete(req); }) == Errc::BackendRejected);

  BackendServer down(std::make_shared<FlakyBackend>(100, Errc::BackendUnavailable));
  down.start();
  o.base_url = down.base_url();
  CHECK(code_of([&] { HttpBackend(o).complete(req); }) == Errc::BackendUnavailable);

  server.stop();
  o.base_url = server.base_url();
  o.connect_timeout = 200ms;
  CHECK(code_of([&] { HttpBackend(o).complete(req); }) == Errc::BackendUnavailable);

  o.base_url.clear();
  CHECK(code_of([&] { HttpBackend(o).complete(req); }) == Errc::InvalidConfig);
}

TEST_CASE("workspace experiment over the stored test split") {
  testing::TempDir dir;
  Workspace ws(dir.path());
  testing::ingest_fixtures(ws);
  ws.put_references(nlohmann::json::parse(testing::slurp("fixtures/references.json")).get<std::map<std::string, std::string>>());
  const auto split = ws.split(100, 7);
  ExperimentSpec spec;
  spec.models = {{"ft"}, {"chat"}};
  spec.models[1].strategy = PromptStrategy::SystemPromptChat;
  spec.repetitions = 2;
  EchoBackend echo;
  const auto result = ws.run_experiment(spec, echo);
  CHECK(result.failures.empty());
  CHECK(result.runs.size() == 20 * 2 * 2);
  for (const auto& r : result.runs) CHECK(r.output_text == ws.context(r.facility_id).serialized);
  CHECK(ws.runs(std::string("ft")).size() == 40);

  spec.facility_ids = {split.train[0].facility_id};
  CHECK(code_of([&] { ws.run_experiment(spec, echo); }) == Errc::SplitViolation);

  CHECK(code_of([&] { ws.run("nope"); }) == Errc::NotFound);
  CHECK(code_of([] { make_backend("gpt"); }) == Errc::InvalidConfig);
}

}  // TEST_SUITE
