#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>

#include "caleido/error.hpp"
#include "caleido/generation.hpp"
#include "caleido/workbench.hpp"

namespace caleido {

using BackendFactory = std::function<std::unique_ptr<GenerationBackend>(std::string_view)>;

struct ServiceOptions {
  /// Bearer token required on mutating routes; empty disables the check.
  std::string token;
  BackendFactory backend_factory = make_backend;
  RetryPolicy retry;
};

/// CALEIDO_TOKEN, default backends.
ServiceOptions service_options_from_env();

/// 422 validation, 404 missing, 409 conflict, 401 auth, 502 backend,
/// 500 storage.
int http_status(Errc code);

/// HTTP API over a Workspace. Routes:
///   POST /providers, GET /providers
///   POST /catalogs                      {"provider_id", "payload"}
///   GET /facilities, POST /facilities, GET /facilities/{id}
///   GET /contexts/{facility}
///   POST /datasets/split                {"train_count", "seed", "references"?}
///   POST /experiments (202), GET /experiments/{id}
///   GET /runs[?model=], GET /runs/{id}
///   POST /runs/{id}/annotations, GET /runs/{id}/annotations
///   POST /annotations/auto              {"model_id"?, "threshold"?}
///   GET /reports/{model}[?format=text][&annotator=]
/// Errors are {"error": {"code", "message", "field"}}.
class Service {
 public:
  Service(Workspace& workspace, ServiceOptions options = service_options_from_env());
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves in a background thread; returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Blocks until stop() is called.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace caleido
