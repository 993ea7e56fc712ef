#include "lalog/server/http.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>

namespace lalog::server {

struct HttpServer::Impl {
  Service& service;
  HttpOptions options;
  httplib::Server server;
  std::thread thread;
  int port = -1;

  Impl(Service& s, HttpOptions o) : service(s), options(std::move(o)) {}

  void handle(const httplib::Request& req, httplib::Response& res) {
    ApiRequest api;
    api.method = req.method;
    api.path = req.path;
    for (const auto& [k, v] : req.headers) {
      std::string key = k;
      std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
      api.headers.emplace(std::move(key), v);
    }
    // httplib merges urlencoded form fields into params; keep the URL query separate.
    const auto qpos = req.target.find('?');
    if (qpos != std::string::npos) httplib::detail::parse_query_text(req.target.substr(qpos + 1), api.query);
    if (req.get_header_value("Content-Type").starts_with("application/x-www-form-urlencoded")) {
      httplib::detail::parse_query_text(req.body, api.form);
    } else {
      api.body = req.body;
    }
    ApiResponse out;
    try {
      out = service.handle(api);
    } catch (const std::exception& e) {
      spdlog::error("{} {} failed: {}", req.method, req.path, e.what());
      out = error_response(500, "internal_error");
    }
    res.status = out.status;
    for (const auto& [k, v] : out.headers) res.set_header(k, v);
    if (out.status != 204) res.set_content(std::move(out.body), out.content_type);
    spdlog::debug("{} {} -> {}", req.method, req.path, out.status);
  }
};

HttpServer::HttpServer(Service& service, HttpOptions options) : impl_(std::make_unique<Impl>(service, std::move(options))) {
  auto& s = impl_->server;
  const std::size_t threads = std::max<std::size_t>(1, impl_->options.threads);
  s.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  s.set_payload_max_length(impl_->options.max_body_bytes);
  s.set_tcp_nodelay(true);
  auto handler = [this](const httplib::Request& req, httplib::Response& res) { impl_->handle(req, res); };
  s.Get(".*", handler);
  s.Post(".*", handler);
  s.Put(".*", handler);
  s.Delete(".*", handler);
  s.Patch(".*", handler);
  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    // Only reached for errors httplib raises itself, such as 413.
    if (res.body.empty()) {
      const char* code = res.status == 413 ? "oversize" : "bad_request";
      res.set_content(std::string("{\"error\":\"") + code + "\"}", "application/json");
    }
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  auto& o = impl_->options;
  if (o.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(o.host);
  } else {
    impl_->port = impl_->server.bind_to_port(o.host, o.port) ? o.port : -1;
  }
  if (impl_->port < 0) throw std::runtime_error("cannot listen on " + o.host + ":" + std::to_string(o.port));
  return impl_->port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

int HttpServer::start() {
  const int port = bind();
  impl_->thread = std::thread([this] { run(); });
  impl_->server.wait_until_ready();
  return port;
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace lalog::server
