#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "caleido/error.hpp"
#include "caleido/evaluation.hpp"
#include "caleido/planner.hpp"
#include "caleido/prompt.hpp"
#include "caleido/service.hpp"
#include "caleido/store.hpp"
#include "caleido/workbench.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace caleido;

namespace {

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, p.string() + ": " + e.what());
  }
}

std::vector<fs::path> annotation_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) throw Error(Errc::IoFailure, dir.string() + " is not a directory");
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".json" || ext == ".jsonl")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<json> json_records(const fs::path& file) {
  const std::string text = read_file(file);
  std::vector<json> out;
  try {
    if (file.extension() == ".jsonl") {
      std::istringstream in(text);
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(json::parse(line));
      }
    } else {
      json j = json::parse(text);
      if (j.is_array()) {
        for (auto& x : j) out.push_back(std::move(x));
      } else {
        out.push_back(std::move(j));
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidAnnotation, file.string() + ": " + e.what());
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caleido: catalog-to-description generation workbench"};
  app.require_subcommand(1);
  std::string workspace_dir;
  app.add_option("-w,--workspace", workspace_dir, "Workspace directory (default $CALEIDO_WORKSPACE)");
  auto workspace = [&] {
    return Workspace(workspace_dir.empty() ? Workspace::default_root() : fs::path(workspace_dir));
  };

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Register a provider and ingest its catalog");
  std::string descriptor_file, provider_id, catalog_file;
  ingest->add_option("--provider", descriptor_file, "Provider descriptor JSON file");
  ingest->add_option("--provider-id", provider_id, "Already registered provider id");
  ingest->add_option("--catalog", catalog_file, "Catalog payload")->required();

  // context
  auto* context = app.add_subcommand("context", "Print facility contexts");
  std::string context_facility;
  bool context_json = false;
  context->add_option("facility", context_facility, "Facility id (default: all)");
  context->add_flag("--json", context_json, "Print the structured record");

  // dataset
  auto* dataset = app.add_subcommand("dataset", "Build, split and export the dataset");
  dataset->require_subcommand(1);
  auto* ds_build = dataset->add_subcommand("build", "Store reference descriptions");
  std::string references_file;
  ds_build->add_option("--references", references_file, "JSON object facility_id -> text")->required();
  auto* ds_split = dataset->add_subcommand("split", "Seeded train/test split");
  std::size_t train_count = 0;
  std::uint64_t seed = 0;
  ds_split->add_option("--train", train_count, "Training facilities")->required();
  ds_split->add_option("--seed", seed, "Shuffle seed");
  ds_split->add_option("--references", references_file, "JSON object facility_id -> text");
  auto* ds_export = dataset->add_subcommand("export", "Write {input, context, output} lines");
  std::string export_split = "train", export_out;
  ds_export->add_option("--split", export_split, "train or test");
  ds_export->add_option("--out", export_out, "Output file")->required();

  // prompt
  auto* prompt = app.add_subcommand("prompt", "Render prompts");
  prompt->require_subcommand(1);
  auto* prompt_render = prompt->add_subcommand("render", "Render one facility's prompt");
  std::string prompt_facility, prompt_strategy = "finetune", prompt_template = "mixtral-system";
  prompt_render->add_option("--facility", prompt_facility, "Facility id")->required();
  prompt_render->add_option("--strategy", prompt_strategy, "finetune or chat");
  prompt_render->add_option("--template", prompt_template, "Chat template name or file");

  // generate
  auto* generate = app.add_subcommand("generate", "Run an experiment grid");
  std::string experiment_file;
  generate->add_option("--experiment", experiment_file, "Experiment JSON file")->required();

  // plan
  auto* plan = app.add_subcommand("plan", "Memory, device map and cost estimates");
  std::string model_file, devices_file;
  std::optional<double> params, rate, hours;
  int bits = 16;
  double buffer = kDefaultRuntimeBufferGb;
  plan->add_option("--model", model_file, "Model profile JSON");
  plan->add_option("--params", params, "Parameter count");
  plan->add_option("--bits", bits, "Quantization bits");
  plan->add_option("--buffer", buffer, "Runtime buffer in GB");
  plan->add_option("--devices", devices_file, "Device list JSON");
  plan->add_option("--rate", rate, "Hourly rate");
  plan->add_option("--hours", hours, "Hours");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Annotate runs and print metrics");
  std::string runs_dir, annotations_dir, eval_model;
  bool eval_auto = false;
  double threshold = kDefaultMatchThreshold;
  evaluate->add_option("--runs", runs_dir, "Workspace holding the runs");
  auto* auto_flag = evaluate->add_flag("--auto", eval_auto, "Annotate with the automatic matcher");
  evaluate->add_option("--annotations", annotations_dir, "Directory of annotation records")
      ->excludes(auto_flag);
  evaluate->add_option("--model", eval_model, "Restrict to one model");
  evaluate->add_option("--threshold", threshold, "Automatic match threshold");

  // report
  auto* report = app.add_subcommand("report", "Aggregate a model's metrics");
  std::string report_model, report_annotator;
  bool report_json = false;
  report->add_option("--model", report_model, "Model id")->required();
  report->add_option("--annotator", report_annotator, "Use this annotator's records");
  report->add_flag("--json", report_json, "Print the structured report");

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  int port = 8080;
  std::string host = "127.0.0.1";
  serve->add_option("--port", port, "Port (0 = ephemeral)");
  serve->add_option("--host", host, "Bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "E_USAGE: " << e.what() << "\n";
    return 64;
  }

  try {
    if (*ingest) {
      Workspace ws = workspace();
      if (!descriptor_file.empty()) {
        const auto d = ws.add_provider(descriptor_from_json(read_json(descriptor_file)));
        provider_id = d.provider_id;
      }
      if (provider_id.empty()) throw Error(Errc::Usage, "--provider or --provider-id is required");
      const auto s = ws.ingest(provider_id, read_file(catalog_file));
      std::cout << json{{"provider_id", s.provider_id},
                        {"records", s.records},
                        {"facilities", s.facilities},
                        {"contexts", s.contexts}}
                       .dump()
                << "\n";
    } else if (*context) {
      Workspace ws = workspace();
      std::vector<ContextDocument> docs;
      if (context_facility.empty()) {
        docs = ws.contexts();
      } else {
        docs.push_back(ws.context(context_facility));
      }
      for (const auto& d : docs) {
        if (context_json) {
          std::cout << to_json(d).dump() << "\n";
        } else {
          std::cout << d.facility_id << "\t" << d.serialized << "\n";
        }
      }
    } else if (*dataset) {
      Workspace ws = workspace();
      if (!references_file.empty()) {
        ws.put_references(read_json(references_file).get<std::map<std::string, std::string>>());
      }
      if (*ds_split) {
        const auto s = ws.split(train_count, seed);
        json train = json::array(), test = json::array();
        for (const auto& e : s.train) train.push_back(e.facility_id);
        for (const auto& e : s.test) test.push_back(e.facility_id);
        std::cout << json{{"train", train}, {"test", test}}.dump() << "\n";
      } else if (*ds_export) {
        const auto split = split_from_name(export_split);
        if (!split) throw Error(Errc::Usage, "--split must be train or test");
        const auto n = export_dataset(ws.examples(*split), export_out);
        std::cout << n << "\n";
      }
    } else if (*prompt) {
      Workspace ws = workspace();
      const auto strategy = strategy_from_name(prompt_strategy);
      if (!strategy) throw Error(Errc::Usage, "unknown strategy '" + prompt_strategy + "'");
      std::optional<DatasetExample> example;
      for (const auto& e : ws.examples()) {
        if (e.facility_id == prompt_facility) example = e;
      }
      if (!example) {
        example = build_example(ws.facility(prompt_facility), ws.context(prompt_facility),
                                std::nullopt, Split::Test);
      }
      GenerationConfig config;
      config.model_id = "render";
      config.strategy = *strategy;
      config.chat_template = prompt_template;
      std::cout << build_prompt(*example, config, load_system_prompt()).text;
    } else if (*generate) {
      Workspace ws = workspace();
      const auto spec = experiment_from_json(read_json(experiment_file));
      auto backend = make_backend(spec.backend);
      const auto result = ws.run_experiment(spec, *backend);
      std::cout << to_json(result).dump() << "\n";
      if (!result.failures.empty()) return 3;
    } else if (*plan) {
      json out = json::object();
      ModelProfile profile;
      if (!model_file.empty()) {
        profile = profile_from_json(read_json(model_file));
      } else if (params) {
        profile.model_id = "model";
        profile.parameter_count = *params;
        profile.quantization_bits = bits;
        validate_profile(profile);
      }
      if (profile.parameter_count > 0) {
        out["model_id"] = profile.model_id;
        out["parameter_count"] = profile.parameter_count;
        out["quantization_bits"] = profile.quantization_bits;
        out["memory_gb"] =
            estimate_model_memory(profile.parameter_count, profile.quantization_bits, buffer);
      }
      if (!devices_file.empty()) {
        if (profile.layer_sizes.empty()) {
          throw Error(Errc::InvalidProfile, "device planning needs layer_sizes in the model profile");
        }
        const auto devices = devices_from_json(read_json(devices_file));
        out["device_map"] = to_json(plan_device_map(profile.layer_sizes, devices), devices);
      }
      if (rate || hours) {
        if (!rate || !hours) throw Error(Errc::Usage, "--rate and --hours go together");
        const auto c = estimate_cost(*rate, *hours);
        out["cost"] = {{"hourly_rate", c.hourly_rate}, {"hours", c.hours}, {"total", c.total},
                       {"total_text", format_fixed(c.total, 4)}};
      }
      if (out.empty()) throw Error(Errc::Usage, "nothing to plan: give --model, --params or --rate/--hours");
      std::cout << out.dump(2) << "\n";
    } else if (*evaluate) {
      Workspace ws(runs_dir.empty() ? (workspace_dir.empty() ? Workspace::default_root()
                                                             : fs::path(workspace_dir))
                                    : fs::path(runs_dir));
      const std::optional<std::string> model =
          eval_model.empty() ? std::nullopt : std::optional<std::string>(eval_model);
      std::vector<AnnotationRecord> records;
      if (eval_auto) {
        records = ws.auto_annotate(model, threshold);
      } else if (!annotations_dir.empty()) {
        for (const auto& file : annotation_files(annotations_dir)) {
          for (const auto& j : json_records(file)) records.push_back(ws.annotate(annotation_from_json(j)));
        }
      } else {
        for (const auto& r : ws.runs(model)) {
          for (auto& a : ws.annotations(r.run_id)) records.push_back(std::move(a));
        }
      }
      for (const auto& a : records) {
        std::cout << json{{"run_id", a.run_id}, {"annotator", a.annotator},
                          {"metrics", to_json(ws.metrics(a))}}
                         .dump()
                  << "\n";
      }
    } else if (*report) {
      Workspace ws = workspace();
      const std::optional<std::string> annotator =
          report_annotator.empty() ? std::nullopt : std::optional<std::string>(report_annotator);
      if (report_json) {
        std::cout << to_json(ws.report(report_model, annotator)).dump(2) << "\n";
      } else {
        std::cout << ws.report_text(report_model, annotator);
      }
    } else if (*serve) {
      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);
      Workspace ws = workspace();
      Service service(ws);
      const int bound = service.start(host, port);
      std::cout << bound << std::endl;
      int received = 0;
      sigwait(&signals, &received);
      service.stop();
    }
  } catch (const Error& e) {
    std::cerr << e.one_line() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "E_IO_FAILURE: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
