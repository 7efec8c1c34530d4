#include <cstdlib>
#include <thread>

#include "caleido/error.hpp"
#include "caleido/generation.hpp"
#include "httplib.h"

namespace caleido {

using nlohmann::json;

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
  if (options_.base_url.empty()) {
    throw Error(Errc::InvalidConfig, "backend base URL is empty (set CALEIDO_BACKEND_URL)");
  }
}

HttpBackendOptions HttpBackend::options_from_env() {
  HttpBackendOptions o;
  if (const char* url = std::getenv("CALEIDO_BACKEND_URL")) o.base_url = url;
  if (const char* token = std::getenv("CALEIDO_BACKEND_TOKEN")) o.bearer_token = token;
  return o;
}

std::string HttpBackend::complete(const GenerationRequest& request) {
  httplib::Client client(options_.base_url);
  client.set_connection_timeout(options_.connect_timeout);
  client.set_read_timeout(options_.read_timeout);
  client.set_write_timeout(options_.read_timeout);
  httplib::Headers headers;
  if (!options_.bearer_token.empty()) {
    headers.emplace("Authorization", "Bearer " + options_.bearer_token);
  }
  auto res = client.Post(options_.path, headers, request.to_wire().dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    const std::string what =
        options_.base_url + options_.path + ": " + httplib::to_string(err);
    if (err == httplib::Error::Read || err == httplib::Error::Write) {
      throw Error(Errc::Timeout, what);
    }
    throw Error(Errc::BackendUnavailable, what);
  }
  if (res->status >= 500) {
    throw Error(Errc::BackendUnavailable,
                "backend answered " + std::to_string(res->status) + ": " + res->body);
  }
  if (res->status >= 400) {
    throw Error(Errc::BackendRejected,
                "backend answered " + std::to_string(res->status) + ": " + res->body);
  }
  try {
    const json body = json::parse(res->body);
    return body.at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(Errc::BackendRejected, std::string("backend reply lacks a text field: ") + e.what());
  }
}

struct BackendServer::Impl {
  std::shared_ptr<GenerationBackend> backend;
  httplib::Server server;
  std::thread thread;
  int port = 0;
};

BackendServer::BackendServer(std::shared_ptr<GenerationBackend> backend)
    : impl_(std::make_unique<Impl>()) {
  impl_->backend = std::move(backend);
  impl_->server.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto request = GenerationRequest::from_wire(json::parse(req.body));
      res.set_content(json{{"text", impl_->backend->complete(request)}}.dump(),
                      "application/json");
    } catch (const json::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    } catch (const Error& e) {
      res.status = e.code() == Errc::BackendRejected || e.code() == Errc::InvalidMessage ? 400 : 503;
      res.set_content(json{{"error", e.one_line()}}.dump(), "application/json");
    }
  });
}

BackendServer::~BackendServer() { stop(); }

int BackendServer::start(int port) {
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
  } else {
    impl_->port = impl_->server.bind_to_port("127.0.0.1", port) ? port : -1;
  }
  if (impl_->port < 0) throw Error(Errc::IoFailure, "cannot bind backend server");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void BackendServer::stop() {
  if (impl_ && impl_->thread.joinable()) {
    impl_->server.stop();
    impl_->thread.join();
  }
}

std::string BackendServer::base_url() const {
  return "http://127.0.0.1:" + std::to_string(impl_->port);
}

}  // namespace caleido
