#include "caleido/service.hpp"

#include <atomic>
#include <cstdlib>
#include <map>
#include <mutex>
#include <thread>

#include "httplib.h"

namespace caleido {

using nlohmann::json;

ServiceOptions service_options_from_env() {
  ServiceOptions o;
  if (const char* token = std::getenv("CALEIDO_TOKEN")) o.token = token;
  return o;
}

int http_status(Errc code) {
  switch (code) {
    case Errc::NotFound:
    case Errc::NoRuns:
      return 404;
    case Errc::Conflict:
    case Errc::ConflictingIdentity:
    case Errc::DuplicateFacility:
    case Errc::SplitViolation:
    case Errc::MissingCells:
      return 409;
    case Errc::Unauthorized:
      return 401;
    case Errc::BackendUnavailable:
    case Errc::BackendRejected:
    case Errc::Timeout:
      return 502;
    case Errc::IoFailure:
      return 500;
    default:
      return 422;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
  json err{{"code", std::string(code_name(e.code()))}, {"message", e.what()}};
  err["field"] = e.field().empty() ? json(nullptr) : json(e.field());
  send_json(res, http_status(e.code()), json{{"error", std::move(err)}});
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidRecord, std::string("body is not valid JSON: ") + e.what());
  }
}

std::optional<std::string> query(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  return req.get_param_value(key);
}

}  // namespace

struct Service::Impl {
  Workspace& ws;
  ServiceOptions options;
  httplib::Server server;
  std::thread listener;
  std::atomic<bool> running{false};

  std::mutex jobs_mu;
  std::map<std::string, json> jobs;
  std::vector<std::thread> workers;
  int next_job = 1;

  Impl(Workspace& w, ServiceOptions o) : ws(w), options(std::move(o)) {}

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  Handler guarded(Handler h, bool mutating) {
    return [this, h = std::move(h), mutating](const httplib::Request& req, httplib::Response& res) {
      try {
        if (mutating && !options.token.empty() &&
            req.get_header_value("Authorization") != "Bearer " + options.token) {
          throw Error(Errc::Unauthorized, "missing or wrong bearer token");
        }
        h(req, res);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const json::exception& e) {
        send_error(res, Error(Errc::InvalidRecord, e.what()));
      } catch (const std::exception& e) {
        send_error(res, Error(Errc::IoFailure, e.what()));
      }
    };
  }

  void routes();
  std::string submit_experiment(const ExperimentSpec& spec);
};

void Service::Impl::routes() {
  server.Post("/providers", guarded([this](const auto& req, auto& res) {
    send_json(res, 201, to_json(ws.add_provider(descriptor_from_json(parse_body(req)))));
  }, true));

  server.Get("/providers", guarded([this](const auto&, auto& res) {
    json out = json::array();
    for (const auto& d : ws.providers()) out.push_back(to_json(d));
    send_json(res, 200, out);
  }, false));

  server.Post("/catalogs", guarded([this](const auto& req, auto& res) {
    const json body = parse_body(req);
    if (!body.contains("provider_id") || !body["provider_id"].is_string()) {
      throw Error(Errc::InvalidRecord, "provider_id must be a string", "/provider_id");
    }
    if (!body.contains("payload") || !body["payload"].is_string()) {
      throw Error(Errc::InvalidRecord, "payload must be a string", "/payload");
    }
    const auto s = ws.ingest(body["provider_id"].get<std::string>(), body["payload"].get<std::string>());
    send_json(res, 200, {{"provider_id", s.provider_id},
                         {"records", s.records},
                         {"facilities", s.facilities},
                         {"contexts", s.contexts}});
  }, true));

  server.Get("/facilities", guarded([this](const auto&, auto& res) {
    json out = json::array();
    for (const auto& f : ws.facilities()) out.push_back(to_json(f));
    send_json(res, 200, out);
  }, false));

  server.Post("/facilities", guarded([this](const auto& req, auto& res) {
    FacilityRecord r;
    try {
      r = record_from_json(parse_body(req));
    } catch (const Error& e) {
      throw Error(Errc::InvalidRecord, e.what(), e.field());
    }
    send_json(res, 201, to_json(ws.put_facility(std::move(r))));
  }, true));

  server.Get(R"(/facilities/([^/]+))", guarded([this](const auto& req, auto& res) {
    send_json(res, 200, to_json(ws.facility(req.matches[1])));
  }, false));

  server.Get(R"(/contexts/([^/]+))", guarded([this](const auto& req, auto& res) {
    send_json(res, 200, to_json(ws.context(req.matches[1])));
  }, false));

  server.Post("/datasets/split", guarded([this](const auto& req, auto& res) {
    const json body = parse_body(req);
    if (!body.contains("train_count") || !body["train_count"].is_number_unsigned()) {
      throw Error(Errc::InvalidRecord, "train_count must be a non-negative integer", "/train_count");
    }
    if (body.contains("references")) {
      ws.put_references(body["references"].get<std::map<std::string, std::string>>());
    }
    const auto split = ws.split(body["train_count"].get<std::size_t>(), body.value("seed", std::uint64_t{0}));
    json train = json::array(), test = json::array();
    for (const auto& e : split.train) train.push_back(e.facility_id);
    for (const auto& e : split.test) test.push_back(e.facility_id);
    send_json(res, 200, {{"train", train}, {"test", test}});
  }, true));

  server.Post("/experiments", guarded([this](const auto& req, auto& res) {
    const auto spec = experiment_from_json(parse_body(req));
    options.backend_factory(spec.backend);  // reject unknown backends up front
    const std::string id = submit_experiment(spec);
    std::lock_guard lock(jobs_mu);
    send_json(res, 202, jobs.at(id));
  }, true));

  server.Get(R"(/experiments/([^/]+))", guarded([this](const auto& req, auto& res) {
    std::lock_guard lock(jobs_mu);
    auto it = jobs.find(req.matches[1]);
    if (it == jobs.end()) throw Error(Errc::NotFound, "unknown experiment '" + std::string(req.matches[1]) + "'");
    send_json(res, 200, it->second);
  }, false));

  server.Get("/runs", guarded([this](const auto& req, auto& res) {
    json out = json::array();
    for (const auto& r : ws.runs(query(req, "model"))) out.push_back(to_json(r));
    send_json(res, 200, out);
  }, false));

  server.Get(R"(/runs/([^/]+))", guarded([this](const auto& req, auto& res) {
    send_json(res, 200, to_json(ws.run(req.matches[1])));
  }, false));

  server.Post(R"(/runs/([^/]+)/annotations)", guarded([this](const auto& req, auto& res) {
    const std::string run_id = req.matches[1];
    ws.run(run_id);  // unknown run is 404 before any body validation
    json body = parse_body(req);
    if (body.is_object() && !body.contains("run_id")) body["run_id"] = run_id;
    AnnotationRecord a = annotation_from_json(body);
    if (a.run_id != run_id) {
      throw Error(Errc::InvalidAnnotation, "run_id does not match the URL", "/run_id");
    }
    a = ws.annotate(std::move(a));
    send_json(res, 201, {{"annotation", to_json(a)}, {"metrics", to_json(ws.metrics(a))}});
  }, true));

  server.Get(R"(/runs/([^/]+)/annotations)", guarded([this](const auto& req, auto& res) {
    json out = json::array();
    for (const auto& a : ws.annotations(req.matches[1])) {
      out.push_back({{"annotation", to_json(a)}, {"metrics", to_json(ws.metrics(a))}});
    }
    send_json(res, 200, out);
  }, false));

  server.Post("/annotations/auto", guarded([this](const auto& req, auto& res) {
    const json body = req.body.empty() ? json::object() : parse_body(req);
    std::optional<std::string> model;
    if (body.contains("model_id")) model = body["model_id"].get<std::string>();
    const auto records = ws.auto_annotate(model, body.value("threshold", kDefaultMatchThreshold));
    json out = json::array();
    for (const auto& a : records) out.push_back({{"run_id", a.run_id}, {"metrics", to_json(ws.metrics(a))}});
    send_json(res, 200, out);
  }, true));

  server.Get(R"(/reports/([^/]+))", guarded([this](const auto& req, auto& res) {
    const std::string model = req.matches[1];
    const auto annotator = query(req, "annotator");
    if (query(req, "format").value_or("json") == "text") {
      res.status = 200;
      res.set_content(ws.report_text(model, annotator), "text/plain; charset=utf-8");
      return;
    }
    const auto report = ws.report(model, annotator);
    const std::vector<ModelReport> one{report};
    send_json(res, 200, {{"report", to_json(report)}, {"table", render_report_table(one)}});
  }, false));
}

std::string Service::Impl::submit_experiment(const ExperimentSpec& spec) {
  std::lock_guard lock(jobs_mu);
  const std::string id = "exp-" + std::to_string(next_job++);
  jobs[id] = {{"id", id}, {"state", "running"}, {"spec", to_json(spec)}};
  workers.emplace_back([this, id, spec] {
    json status{{"id", id}, {"spec", to_json(spec)}};
    try {
      auto backend = options.backend_factory(spec.backend);
      const auto result = ws.run_experiment(spec, *backend, options.retry);
      status["state"] = result.failures.empty() ? "succeeded" : "completed-with-failures";
      status["result"] = to_json(result);
    } catch (const Error& e) {
      status["state"] = "failed";
      status["error"] = {{"code", std::string(code_name(e.code()))}, {"message", e.what()}};
    } catch (const std::exception& e) {
      status["state"] = "failed";
      status["error"] = {{"code", "E_IO_FAILURE"}, {"message", e.what()}};
    }
    std::lock_guard inner(jobs_mu);
    jobs[id] = std::move(status);
  });
  return id;
}

Service::Service(Workspace& workspace, ServiceOptions options)
    : impl_(std::make_unique<Impl>(workspace, std::move(options))) {
  impl_->routes();
}

Service::~Service() {
  stop();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(impl_->jobs_mu);
    workers.swap(impl_->workers);
  }
  for (auto& w : workers) w.join();
}

int Service::start(const std::string& host, int port) {
  int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                        : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(Errc::IoFailure, "cannot bind " + host + ":" + std::to_string(port));
  impl_->running = true;
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void Service::wait() {
  if (impl_->listener.joinable()) impl_->listener.join();
}

void Service::stop() {
  if (impl_->running.exchange(false)) impl_->server.stop();
  if (impl_->listener.joinable() && impl_->listener.get_id() != std::this_thread::get_id()) {
    impl_->listener.join();
  }
}

}  // namespace caleido
