// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>

#include "caleido/catalog.hpp"
#include "caleido/error.hpp"
#include "caleido/planner.hpp"
#include "caleido/prompt.hpp"
#include "generators.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace caleido;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Collects the first failure of a criterion.
struct Verdict {
  std::string failure;
  void require(bool ok, const std::string& what) {
    if (!ok && failure.empty()) failure = what;
  }
};

int failures = 0;

void criterion(const std::string& name, const std::function<void(Verdict&)>& body) {
  Verdict v;
  const auto start = Clock::now();
  try {
    body(v);
  } catch (const std::exception& e) {
    v.require(false, std::string("exception: ") + e.what());
  }
  std::ostringstream line;
  line.setf(std::ios::fixed);
  line.precision(2);
  if (v.failure.empty()) {
    line << "PASS " << name << " (" << seconds_since(start) << " s)";
  } else {
    line << "FAIL " << name << ": " << v.failure;
    ++failures;
  }
  std::cout << line.str() << std::endl;
}

void metric_identity(Verdict& v) {
  const auto start = Clock::now();
  testing::Rng rng(101);
  std::size_t checked = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto c = testing::random_annotation(rng);
    const auto m = compute_metrics(c.annotation, c.context, c.description);
    if (m.counts.total_features_added == 0) continue;
    ++checked;
    const double sum = round_half_even(*m.precision_pct, 1) + round_half_even(*m.hallucination_pct, 1);
    v.require(std::abs(sum - 100.0) <= 0.1 + 1e-9, "case " + std::to_string(i) + " sums to " + std::to_string(sum));
    v.require(std::abs(*m.precision_pct + *m.hallucination_pct - 100.0) <= 1e-9, "unrounded sum off at case " + std::to_string(i));
  }
  v.require(checked >= 1000, "only " + std::to_string(checked) + " non-empty cases");
  v.require(seconds_since(start) < 5.0, "slower than 5 s");
}

void counting_oracle(Verdict& v) {
  testing::Rng rng(202);
  for (int i = 0; i < 2000; ++i) {
    const auto c = testing::random_annotation(rng);
    const auto m = compute_metrics(c.annotation, c.context, c.description);
    v.require(testing::matches_recount(m, c.annotation, c.context), "mismatch at case " + std::to_string(i));
  }
}

void aggregation_fixture(Verdict& v) {
  const auto fixture = testing::load_aggregation_fixture();
  std::vector<ModelReport> reports;
  for (const auto& [model, facilities] : fixture.models) {
    v.require(facilities.size() == 20, model + ": expected 20 facilities");
    for (const auto& f : facilities) v.require(f.repetitions.size() == 5, model + ": expected 5 repetitions");
    const auto r = aggregate(facilities, model);
    const auto& e = fixture.expected[model];
    auto close = [&](const MetricStat& s, const char* key) {
      v.require(std::abs(s.mean - e[key]["mean"].get<double>()) < 1e-9, model + " " + key + " mean");
      v.require(std::abs(s.stddev - e[key]["stddev"].get<double>()) < 1e-9, model + " " + key + " stddev");
    };
    close(r.completeness, "completeness");
    close(*r.precision, "precision");
    close(*r.hallucination, "hallucination");
    close(r.length, "length");
    reports.push_back(r);
  }
  v.require(fixture.models.size() == 2, "expected 2 models");
  v.require(render_report_table(reports) == testing::slurp("golden/report_table.txt"),
            "report table differs from golden file");
}

void end_to_end(Verdict& v) {
  const auto start = Clock::now();
  testing::TempDir dir;
  Workspace ws(dir.path());
  testing::ingest_fixtures(ws);
  v.require(ws.providers().size() == 3, "expected 3 providers");
  ws.put_references(
      nlohmann::json::parse(testing::slurp("fixtures/references.json")).get<std::map<std::string, std::string>>());
  const auto split = ws.split(100, 7);
  v.require(split.test.size() == 20, "expected 20 test facilities");
  ExperimentSpec spec;
  spec.models = {{"mistral-7b-ft"}, {"mixtral-8x7b"}};
  spec.models[1].strategy = PromptStrategy::SystemPromptChat;
  spec.repetitions = 5;
  EchoBackend echo;
  const auto result = ws.run_experiment(spec, echo);
  v.require(result.failures.empty(), "experiment had failures");
  v.require(result.runs.size() == 200, "expected 200 runs, got " + std::to_string(result.runs.size()));
  const auto annotations = ws.auto_annotate();
  v.require(annotations.size() == 200, "expected 200 automatic annotations");
  for (const auto& a : annotations) {
    const auto j = to_json(ws.metrics(a));
    v.require(j["completeness_pct"] == 100.0, a.run_id + ": completeness " + j["completeness_pct"].dump());
    v.require(j["hallucination_pct"] == 0.0, a.run_id + ": hallucination " + j["hallucination_pct"].dump());
    std::istringstream words(ws.run(a.run_id).output_text);
    std::size_t n = 0;
    for (std::string w; words >> w;) ++n;
    v.require(ws.metrics(a).length_words == n, a.run_id + ": word count differs from whitespace split");
  }
  for (const auto& model : {"mistral-7b-ft", "mixtral-8x7b"}) {
    const auto r = ws.report(model);
    v.require(r.completeness.mean == 100.0 && r.hallucination && r.hallucination->mean == 0.0,
              std::string(model) + ": report is not 100/0");
  }
  v.require(seconds_since(start) < 60.0, "slower than 60 s");
}

void memory_estimator(Verdict& v) {
  const double mistral = estimate_model_memory(7.0e9, 4, 1.5);
  v.require(std::abs(mistral - 5.0) < 1e-9, "7e9 @ 4 bit gave " + std::to_string(mistral));
  v.require(std::abs(mistral - 5.0) <= 0.5, "7e9 @ 4 bit outside 10% of 5 GB");
  const double params = count_parameters(mixtral_8x7b_architecture());
  v.require(params == 46702792704.0, "Mixtral parameter count " + std::to_string(params));
  const double mixtral = estimate_model_memory(params, 8, 1.5);
  v.require(std::abs(mixtral - 50.0) <= 5.0, "Mixtral @ 8 bit gave " + std::to_string(mixtral));
}

void cost_estimator(Verdict& v) {
  v.require(estimate_cost(0.1606, 4).total == 0.6424, "0.1606 x 4 h");
  v.require(estimate_cost(1.6121, 1).total == 1.6121, "1.6121 x 1 h");
  v.require(format_fixed(estimate_cost(0.1606, 4).total, 4) == "0.6424", "0.1606 x 4 h text");
}

void device_map(Verdict& v) {
  const auto start = Clock::now();
  testing::Rng rng(303);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> sizes(testing::uniform(rng, 1, 8));
    for (auto& s : sizes) s = 0.5 * static_cast<double>(testing::uniform(rng, 1, 16));
    std::vector<DeviceProfile> devices(testing::uniform(rng, 1, 3));
    for (std::size_t d = 0; d < devices.size(); ++d) {
      devices[d] = {"gpu" + std::to_string(d), static_cast<double>(testing::uniform(rng, 4, 24)),
                    testing::pick(rng, std::vector<double>{0.0, 0.1, 0.15, 0.25})};
    }
    const bool expected = testing::exhaustive_feasible(sizes, devices);
    bool planned = false;
    try {
      const auto plan = plan_device_map(sizes, devices);
      planned = true;
      v.require(plan_respects_budgets(plan, sizes, devices), "plan over budget at instance " + std::to_string(i));
    } catch (const Error& e) {
      v.require(e.code() == Errc::Infeasible, "unexpected error at instance " + std::to_string(i));
    }
    v.require(planned == expected, "feasibility disagrees at instance " + std::to_string(i));
  }
  v.require(seconds_since(start) < 10.0, "slower than 10 s");
}

void chat_template(Verdict& v) {
  const std::string input = "Write me a hotel brochure for the hotel Hotel Aurora in Naples.";
  const std::string context =
      "Recreation: Outdoor swimming pool, Spa with sauna; Dining: Breakfast buffet, Pool bar; "
      "Nearby POIs: The beach is 300 m away";
  const auto messages = render_chat_prompt(load_system_prompt(), input, context);
  v.require(apply_chat_template(messages, load_template("mixtral-system")) ==
                testing::slurp("golden/chat_template_mixtral_system.txt"),
            "system-capable template output differs from golden file");
  try {
    apply_chat_template(messages, load_template("mixtral-stock"));
    v.require(false, "stock template accepted a system message");
  } catch (const Error& e) {
    v.require(e.code() == Errc::UnsupportedRole, "expected UnsupportedRole, got " + e.one_line());
  }
}

void round_trips(Verdict& v) {
  testing::Rng rng(404);
  for (int i = 0; i < 1000; ++i) {
    const auto features = testing::random_features(rng);
    v.require(parse_context(render_context(features)) == features, "context round-trip " + std::to_string(i));
  }

  testing::TempDir dir;
  std::vector<DatasetExample> examples;
  for (int i = 0; i < 200; ++i) {
    examples.push_back({"Write me \"a\" brochure " + testing::messy_text(rng), render_context(testing::random_features(rng)),
                        testing::messy_text(rng), "F" + std::to_string(i), Split::Train});
  }
  export_dataset(examples, dir / "d.jsonl");
  const auto back = import_dataset(dir / "d.jsonl", Split::Train);
  v.require(back.size() == examples.size(), "dataset import size");
  for (std::size_t i = 0; i < std::min(back.size(), examples.size()); ++i) {
    v.require(back[i].input == examples[i].input && back[i].context == examples[i].context &&
                  back[i].output == examples[i].output,
              "dataset round-trip " + std::to_string(i));
  }

  for (int i = 0; i < 2000; ++i) {
    const auto once = clean_text(testing::messy_text(rng));
    v.require(clean_text(once) == once, "clean_text not idempotent on \"" + once + "\"");
  }
  for (const auto& c : nlohmann::json::parse(testing::slurp("fixtures/clean_text_cases.json"))) {
    const auto once = clean_text(c[0].get<std::string>());
    v.require(clean_text(once) == once, "clean_text not idempotent on fixture case");
  }
}

}  // namespace

int main() {
  criterion("metric identity: precision + hallucination = 100", metric_identity);
  criterion("counting oracle equivalence", counting_oracle);
  criterion("aggregation fixture and report golden file", aggregation_fixture);
  criterion("end-to-end echo loop", end_to_end);
  criterion("memory estimator", memory_estimator);
  criterion("cost estimator", cost_estimator);
  criterion("device-map planner vs exhaustive search", device_map);
  criterion("chat template contract", chat_template);
  criterion("round-trip suites", round_trips);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
