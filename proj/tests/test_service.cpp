#include <doctest.h>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <thread>

#include "caleido/error.hpp"
#include "caleido/service.hpp"
#include "httplib.h"
#include "support.hpp"

using namespace caleido;
using nlohmann::json;

namespace {

const json kExperiment = {
    {"models", json::array({{{"model_id", "mistral-7b-ft"}, {"strategy", "finetune"}},
                            {{"model_id", "mixtral-8x7b"}, {"strategy", "chat"}}})},
    {"repetitions", 5},
    {"backend", "echo"}};

json references() { return json::parse(testing::slurp("fixtures/references.json")); }

json provider_json(const char* id) {
  return json::parse(read_file(testing::config(std::string("providers/") + id + ".json")));
}

struct Api {
  Workspace ws;
  Service service;
  httplib::Client client;

  explicit Api(const std::filesystem::path& root, ServiceOptions o = {})
      : ws(root), service(ws, std::move(o)), client("127.0.0.1", service.start()) {}

  httplib::Result post(const std::string& path, const json& body, const std::string& token = {}) {
    httplib::Headers h;
    if (!token.empty()) h.emplace("Authorization", "Bearer " + token);
    return client.Post(path, h, body.dump(), "application/json");
  }
  httplib::Result get(const std::string& path) { return client.Get(path); }
};

json body(const httplib::Result& r) { return json::parse(r->body); }

// Runs the experiment through the API and waits for the job to finish.
json run_experiment(Api& api) {
  auto r = api.post("/experiments", kExperiment);
  REQUIRE(r);
  REQUIRE(r->status == 202);
  const std::string id = body(r)["id"];
  for (int i = 0; i < 600; ++i) {
    auto s = api.get("/experiments/" + id);
    if (body(s)["state"] != "running") return body(s);
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  FAIL("experiment did not finish");
  return {};
}

// Ingest the fixtures, split and annotate through the API.
void api_happy_path(Api& api) {
  for (const auto& p : testing::kProviders) {
    auto r = api.post("/providers", provider_json(p.id));
    REQUIRE(r);
    CHECK(r->status == 201);
    r = api.post("/catalogs", {{"provider_id", p.id}, {"payload", testing::slurp(p.catalog)}});
    CHECK(r->status == 200);
  }
  auto r = api.post("/datasets/split", {{"train_count", 100}, {"seed", 7}, {"references", references()}});
  REQUIRE(r->status == 200);
  CHECK(body(r)["test"].size() == 20);
  const auto job = run_experiment(api);
  CHECK(job["state"] == "succeeded");
  r = api.post("/annotations/auto", json::object());
  REQUIRE(r->status == 200);
  CHECK(body(r).size() == 200);
}

struct Output {
  int status = -1;
  std::string text;
};

Output run_cli(const std::string& args) {
  const std::string cmd = std::string(CALEIDO_CLI) + " " + args + " 2>&1";
  Output out;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.text.append(buf, n);
  const int rc = pclose(p);
  out.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  return out;
}

std::string quote(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_SUITE("service") {

TEST_CASE("status mapping") {
  CHECK(http_status(Errc::NotFound) == 404);
  CHECK(http_status(Errc::NoRuns) == 404);
  CHECK(http_status(Errc::Conflict) == 409);
  CHECK(http_status(Errc::SplitViolation) == 409);
  CHECK(http_status(Errc::Unauthorized) == 401);
  CHECK(http_status(Errc::BackendUnavailable) == 502);
  CHECK(http_status(Errc::InvalidAnnotation) == 422);
  CHECK(http_status(Errc::MalformedCatalog) == 422);
  CHECK(http_status(Errc::IoFailure) == 500);
}

TEST_CASE("annotation for an unknown run is 404") {
  testing::TempDir dir;
  Api api(dir.path());
  auto r = api.post("/runs/nope/annotations", {{"annotator", "a"}, {"description_features", json::array()}});
  REQUIRE(r);
  CHECK(r->status == 404);
  CHECK(body(r)["error"]["code"] == "E_NOT_FOUND");
  CHECK(api.get("/runs/nope")->status == 404);
  CHECK(api.get("/facilities/nope")->status == 404);
  CHECK(api.get("/experiments/exp-9")->status == 404);
  CHECK(api.get("/reports/none")->status == 404);
  CHECK(body(api.get("/reports/none"))["error"]["code"] == "E_NO_RUNS");
}

TEST_CASE("annotation session: preload, versioned submit, stale submit, reload") {
  testing::TempDir dir;
  Api api(dir.path());
  api_happy_path(api);

  const auto run = body(api.get("/runs?model=mixtral-8x7b"))[0];
  const std::string run_id = run["run_id"];
  const auto ctx = body(api.get("/contexts/" + run["facility_id"].get<std::string>()));
  REQUIRE(ctx["features"].size() > 0);

  // The automatic annotation is there to start from.
  auto listed = body(api.get("/runs/" + run_id + "/annotations"));
  REQUIRE(listed.size() == 1);
  json draft = listed[0]["annotation"];
  CHECK(draft["annotator"] == "auto");
  CHECK(draft["version"] == 1);
  CHECK(draft["description_features"].size() == ctx["features"].size());

  // Alice starts from it and adds a hallucination over the first word.
  draft["annotator"] = "alice";
  draft["version"] = 0;
  draft["description_features"].push_back({{"span", {0, 3}}, {"link", "Hallucinated"}});
  draft.erase("completed_at");
  auto r = api.post("/runs/" + run_id + "/annotations", draft);
  REQUIRE(r->status == 201);
  const auto first = body(r);
  CHECK(first["annotation"]["version"] == 1);
  CHECK(first["metrics"] == to_json(api.ws.metrics(annotation_from_json(first["annotation"]))));
  CHECK(first["metrics"]["counts"]["hallucinated_features"] == 1);

  // An edit based on version 1 is accepted; a second edit still based on
  // version 1 is stale.
  json edit = first["annotation"];
  edit["description_features"].erase(edit["description_features"].size() - 1);
  r = api.post("/runs/" + run_id + "/annotations", edit);
  REQUIRE(r->status == 201);
  CHECK(body(r)["annotation"]["version"] == 2);
  CHECK(body(r)["metrics"]["hallucination_pct"] == 0.0);

  json stale = first["annotation"];
  stale["description_features"] = json::array();
  r = api.post("/runs/" + run_id + "/annotations", stale);
  CHECK(r->status == 409);
  CHECK(body(r)["error"]["code"] == "E_CONFLICT");
  CHECK(body(r)["error"]["field"] == "/version");

  // Resubmitting what is stored is a no-op whatever version it carries.
  r = api.post("/runs/" + run_id + "/annotations", edit);
  REQUIRE(r->status == 201);
  CHECK(body(r)["annotation"]["version"] == 2);

  // Reload: server state is what alice last got acknowledged.
  listed = body(api.get("/runs/" + run_id + "/annotations"));
  REQUIRE(listed.size() == 2);
  CHECK(listed[0]["annotation"]["annotator"] == "alice");
  CHECK(listed[0]["annotation"]["version"] == 2);
  CHECK(listed[0]["annotation"]["description_features"] == edit["description_features"]);

  // Rerunning the automatic annotator bumps only its own record.
  api.post("/annotations/auto", {{"model_id", "mixtral-8x7b"}});
  listed = body(api.get("/runs/" + run_id + "/annotations"));
  CHECK(listed[0]["annotation"]["version"] == 2);
  CHECK(listed[1]["annotation"]["version"] == 2);

  r = api.post("/runs/" + run_id + "/annotations", {{"annotator", "bob"}, {"version", -1}, {"description_features", json::array()}});
  CHECK(r->status == 422);
  CHECK(body(r)["error"]["field"] == "/version");
}

TEST_CASE("full API path: annotation errors, read-after-write and report") {
  testing::TempDir dir;
  Api api(dir.path());
  api_happy_path(api);

  auto runs = body(api.get("/runs?model=mistral-7b-ft"));
  REQUIRE(runs.size() == 100);
  const std::string run_id = runs[0]["run_id"];
  const std::string output = runs[0]["output_text"];

  // Span past the end of the description.
  json bad = {{"annotator", "alice"},
              {"description_features", json::array({{{"span", {0, 100000}}, {"link", "Hallucinated"}}})}};
  auto r = api.post("/runs/" + run_id + "/annotations", bad);
  CHECK(r->status == 422);
  CHECK(body(r)["error"]["code"] == "E_INVALID_ANNOTATION");
  CHECK(body(r)["error"]["field"] == "/description_features/0/span");

  r = api.post("/runs/" + run_id + "/annotations", {{"annotator", "alice"}, {"description_features", "x"}});
  CHECK(r->status == 422);
  CHECK(body(r)["error"]["field"] == "/description_features");

  r = api.post("/runs/" + run_id + "/annotations", {{"run_id", "other"}, {"annotator", "alice"}, {"description_features", json::array()}});
  CHECK(r->status == 422);

  // A human annotation linking one feature; read back immediately.
  const json good = {{"annotator", "alice"},
                     {"description_features", json::array({{{"span", {0, 5}}, {"link", "recreation-1"}}})}};
  r = api.post("/runs/" + run_id + "/annotations", good);
  REQUIRE(r->status == 201);
  const auto posted = body(r);
  CHECK(posted["metrics"]["counts"]["context_features_added"] == 1);
  auto listed = body(api.get("/runs/" + run_id + "/annotations"));
  bool found = false;
  for (const auto& a : listed) found = found || a["annotation"] == posted["annotation"];
  CHECK(found);
  CHECK(body(api.get("/runs/" + run_id))["output_text"] == output);

  // The automatic annotations give a perfect report for the echo backend;
  // forcing the automatic annotator ignores alice.
  r = api.get("/reports/mixtral-8x7b?format=text");
  REQUIRE(r->status == 200);
  CHECK(r->body.find("(100.0% - 0.0%)  (100.0% - 0.0%)") != std::string::npos);
  const auto rep = body(api.get("/reports/mistral-7b-ft?annotator=auto"));
  CHECK(rep["report"]["completeness"]["mean"] == 100.0);
  CHECK(rep["report"]["hallucination"]["mean"] == 0.0);
  CHECK(rep["table"].get<std::string>().rfind("Model", 0) == 0);

  const auto with_alice = body(api.get("/reports/mistral-7b-ft"));
  CHECK(with_alice["report"]["completeness"]["mean"].get<double>() < 100.0);

  // Re-posting the same experiment does not duplicate runs.
  const auto again = run_experiment(api);
  CHECK(again["state"] == "succeeded");
  CHECK(body(api.get("/runs")).size() == 200);

  // Training facilities cannot be generated for.
  auto train = api.ws.examples(Split::Train);
  json spec = kExperiment;
  spec["facility_ids"] = {train[0].facility_id};
  r = api.post("/experiments", spec);
  REQUIRE(r->status == 202);
  const std::string id = body(r)["id"];
  json job;
  for (int i = 0; i < 200; ++i) {
    job = body(api.get("/experiments/" + id));
    if (job["state"] != "running") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  CHECK(job["state"] == "failed");
  CHECK(job["error"]["code"] == "E_SPLIT_VIOLATION");
}

TEST_CASE("validation, conflicts and bad bodies") {
  testing::TempDir dir;
  Api api(dir.path());
  CHECK(api.post("/providers", provider_json("northwind"))->status == 201);
  auto second_primary = provider_json("tabula");
  second_primary["priority"] = 1;
  CHECK(api.post("/providers", second_primary)->status == 409);
  auto r = api.client.Post("/providers", "{oops", "application/json");
  CHECK(r->status == 422);
  r = api.post("/catalogs", {{"provider_id", "northwind"}, {"payload", "{\"facilities\": ["}});
  CHECK(r->status == 422);
  CHECK(body(r)["error"]["code"] == "E_MALFORMED_CATALOG");
  r = api.post("/catalogs", {{"provider_id", "northwind"}});
  CHECK(body(r)["error"]["field"] == "/payload");
  r = api.post("/datasets/split", {{"train_count", -1}});
  CHECK(r->status == 422);
  r = api.post("/experiments", {{"models", json::array()}});
  CHECK(r->status == 422);
  r = api.post("/experiments", {{"models", json::array({{{"model_id", "m"}}})}, {"backend", "nope"}});
  CHECK(r->status == 422);

  const json facility = {{"facility_id", "M-1"}, {"name", "Hotel Manual"}, {"city", "Rome"},
                         {"provider_id", "manual"}, {"raw_fields", {{"leisure", "Pool"}}},
                         {"cleaned_fields", {{"leisure", "Pool"}}}, {"provenance", {{"leisure", "manual"}}}};
  r = api.post("/facilities", facility);
  CHECK(r->status == 201);
  CHECK(body(api.get("/facilities/M-1")) == body(r));
  json changed = facility;
  changed["city"] = "Milan";
  CHECK(api.post("/facilities", changed)->status == 409);
  r = api.post("/facilities", {{"facility_id", "M-2"}});
  CHECK(r->status == 422);
}

TEST_CASE("mutating routes require the bearer token when one is configured") {
  testing::TempDir dir;
  ServiceOptions o;
  o.token = "s3cret";
  Api api(dir.path(), o);
  auto r = api.post("/providers", provider_json("northwind"));
  CHECK(r->status == 401);
  CHECK(body(r)["error"]["code"] == "E_UNAUTHORIZED");
  CHECK(api.post("/providers", provider_json("northwind"), "wrong")->status == 401);
  CHECK(api.post("/providers", provider_json("northwind"), "s3cret")->status == 201);
  CHECK(api.get("/providers")->status == 200);
}

}  // TEST_SUITE

TEST_SUITE("cli") {

TEST_CASE("report on an empty workspace fails with E_NO_RUNS") {
  testing::TempDir dir;
  const auto out = run_cli("-w " + quote(dir.path()) + " report --model mistral-7b-ft");
  CHECK(out.status != 0);
  CHECK(out.text.rfind("E_NO_RUNS:", 0) == 0);
  CHECK(out.text.find('\n') == out.text.size() - 1);
}

TEST_CASE("usage errors and failing subcommands print a code prefix") {
  testing::TempDir dir;
  auto out = run_cli("-w " + quote(dir.path()) + " frobnicate");
  CHECK(out.status == 64);
  CHECK(out.text.rfind("E_USAGE:", 0) == 0);
  out = run_cli("-w " + quote(dir.path()) + " context NW-404");
  CHECK(out.status == 2);
  CHECK(out.text.rfind("E_NOT_FOUND:", 0) == 0);
  out = run_cli("plan --params 7e9 --bits 4");
  CHECK(out.status == 0);
  CHECK(json::parse(out.text)["memory_gb"] == 5.0);
  out = run_cli("plan --rate 0.1606 --hours 4");
  CHECK(json::parse(out.text)["cost"]["total_text"] == "0.6424");
  out = run_cli("plan --params 7e9 --bits 5");
  CHECK(out.text.rfind("E_INVALID_PROFILE:", 0) == 0);
}

TEST_CASE("serve --port 0 prints the bound port") {
  testing::TempDir dir;
  int fds[2];
  REQUIRE(pipe(fds) == 0);
  const pid_t pid = fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    dup2(fds[1], STDOUT_FILENO);
    close(fds[0]);
    close(fds[1]);
    const std::string ws = dir.path().string();
    execl(CALEIDO_CLI, CALEIDO_CLI, "-w", ws.c_str(), "serve", "--port", "0", static_cast<char*>(nullptr));
    _exit(127);
  }
  close(fds[1]);
  std::string line;
  char c;
  while (read(fds[0], &c, 1) == 1 && c != '\n') line += c;
  close(fds[0]);
  REQUIRE_FALSE(line.empty());
  const int port = std::stoi(line);
  CHECK(port > 0);
  httplib::Client client("127.0.0.1", port);
  auto r = client.Get("/providers");
  REQUIRE(r);
  CHECK(r->status == 200);
  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
}

TEST_CASE("CLI session and API session produce the same report bytes") {
  testing::TempDir api_dir, cli_dir;
  std::string api_report;
  {
    Api api(api_dir.path());
    api_happy_path(api);
    api_report = api.get("/reports/mistral-7b-ft?format=text")->body;
    CHECK(api.get("/reports/mixtral-8x7b?format=text")->status == 200);
  }

  const std::string w = "-w " + quote(cli_dir.path()) + " ";
  for (const auto& p : testing::kProviders) {
    const auto out = run_cli(w + "ingest --provider " + quote(testing::config(std::string("providers/") + p.id + ".json")) +
                             " --catalog " + quote(testing::data(p.catalog)));
    CHECK_MESSAGE(out.status == 0, out.text);
  }
  auto out = run_cli(w + "dataset split --train 100 --seed 7 --references " + quote(testing::data("fixtures/references.json")));
  CHECK_MESSAGE(out.status == 0, out.text);
  write_file_atomic(cli_dir / "experiment.json", kExperiment.dump());
  out = run_cli(w + "generate --experiment " + quote(cli_dir / "experiment.json"));
  CHECK_MESSAGE(out.status == 0, out.text);
  out = run_cli(w + "evaluate --auto");
  CHECK_MESSAGE(out.status == 0, out.text);
  out = run_cli(w + "report --model mistral-7b-ft");
  CHECK(out.status == 0);
  CHECK(out.text == api_report);

  out = run_cli(w + "dataset export --split train --out " + quote(cli_dir / "train.jsonl"));
  CHECK(out.status == 0);
  CHECK(import_dataset(cli_dir / "train.jsonl", Split::Train).size() == 100);
  out = run_cli(w + "prompt render --facility NW-001 --strategy chat --template mixtral-stock");
  CHECK(out.text.rfind("E_UNSUPPORTED_ROLE:", 0) == 0);
}

}  // TEST_SUITE
