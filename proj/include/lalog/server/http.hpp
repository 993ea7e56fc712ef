#pragma once

#include <memory>
#include <string>
#include <thread>

#include "lalog/server/service.hpp"

namespace lalog::server {

struct HttpOptions {
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
  std::size_t threads = 8;
  std::size_t max_body_bytes = 6 * 1024 * 1024;
};

/// HTTP front end for a Service.
class HttpServer {
 public:
  HttpServer(Service& service, HttpOptions options);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds the listening socket and returns the port. Throws std::runtime_error.
  int bind();
  /// Serves until stop(); call bind() first.
  void run();
  /// bind() + run() on a background thread; returns once accepting.
  int start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace lalog::server
