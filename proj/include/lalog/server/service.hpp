#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lalog/analytics/renderers.hpp"
#include "lalog/auth/activity_config.hpp"
#include "lalog/auth/authorize.hpp"
#include "lalog/auth/identity.hpp"
#include "lalog/auth/launch.hpp"
#include "lalog/server/config.hpp"
#include "lalog/store/event_store.hpp"
#include "lalog/trigger/engine.hpp"
#include "lalog/trigger/mail.hpp"

namespace lalog::server {

struct ApiRequest {
  std::string method = "GET";
  /// Percent-decoded path without the query string.
  std::string path;
  std::multimap<std::string, std::string> query;
  /// Decoded application/x-www-form-urlencoded body.
  std::multimap<std::string, std::string> form;
  /// Lower-case header names.
  std::map<std::string, std::string> headers;
  std::string body;

  std::optional<std::string> query_param(const std::string& key) const;
  std::optional<std::string> form_field(const std::string& key) const;
  std::optional<std::string> header(const std::string& lower_name) const;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;
};

/// Per-session token bucket: `rate` events per second with a one-second burst.
class RateLimiter {
 public:
  explicit RateLimiter(double rate) : rate_(rate) {}
  bool allow(const model::SessionId& session, Instant now);

 private:
  struct Bucket {
    double tokens;
    Instant last;
  };
  double rate_;
  std::mutex mutex_;
  std::unordered_map<model::SessionId, Bucket, model::SessionIdHash> buckets_;
};

/// Everything a Service runs on. Tests and the load generator build this directly.
struct ServiceParts {
  std::vector<auth::ActivityConfig> activities;
  std::unique_ptr<store::EventStore> store;
  std::unique_ptr<trigger::MailGateway> mail;
  std::vector<std::uint8_t> identity_secret;
  std::string base_url = "http://127.0.0.1:8080";
  /// Console assets; empty disables static serving.
  std::filesystem::path static_dir;
  std::filesystem::path dead_letter_dir;
  std::size_t max_body_bytes = 6 * 1024 * 1024;
  double events_per_second = 50.0;
  std::size_t trigger_workers = 2;
  std::chrono::milliseconds mail_retry_delay{1000};
  /// Defaults to random identifiers.
  std::unique_ptr<auth::SessionIdSource> session_ids;
  std::function<Instant()> clock = now_utc;
};

/// Loads activity configs, opens the store and the mail gateway. Throws ConfigError or StoreError.
ServiceParts parts_from_config(const ServiceConfig& config);

/// Ingestion, launch and read API over one store. Thread-safe.
class Service {
 public:
  explicit Service(ServiceParts parts);
  static std::unique_ptr<Service> from_config(const ServiceConfig& config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  ApiResponse handle(const ApiRequest& request);

  const auth::ActivityConfig* activity(const std::string& activity_id) const;
  const std::vector<auth::ActivityConfig>& activities() const { return activities_; }
  store::EventStore& store() { return *store_; }
  const std::string& base_url() const { return base_url_; }
  std::size_t max_body_bytes() const { return max_body_bytes_; }
  /// Waits for queued trigger work (help-request mails and scrubs).
  void drain_triggers();
  std::vector<trigger::TriggerOutcome> trigger_outcomes() const;

 private:
  ApiResponse launch(const std::string& activity_id, const ApiRequest& request);
  ApiResponse ingest(const std::string& session_hex, const ApiRequest& request);
  ApiResponse read(const std::vector<std::string>& segments, const ApiRequest& request);
  ApiResponse list_activities(const ApiRequest& request);
  ApiResponse mylog(const std::vector<std::string>& segments, const ApiRequest& request);
  ApiResponse blob(const model::SessionId& sid, const std::string& seq, const std::string& field);
  std::optional<ApiResponse> static_file(const ApiRequest& request, bool console_route);

  /// Resolves the bearer token (or `token` query parameter when allowed).
  std::optional<auth::Viewer> viewer(const ApiRequest& request, bool allow_query_token) const;

  std::vector<auth::ActivityConfig> activities_;
  std::map<std::string, const auth::ActivityConfig*> by_id_;
  std::unique_ptr<store::EventStore> store_;
  std::unique_ptr<trigger::MailGateway> mail_;
  auth::IdentityVerifier identity_;
  std::string base_url_;
  std::filesystem::path static_dir_;
  std::size_t max_body_bytes_;
  std::function<Instant()> clock_;
  auth::NonceCache nonces_;
  RateLimiter limiter_;
  std::mutex ids_mutex_;
  std::unique_ptr<auth::SessionIdSource> session_ids_;
  analytics::RendererRegistry renderers_;
  std::unique_ptr<trigger::TriggerEngine> triggers_;
};

ApiResponse json_response(int status, const nlohmann::json& body);
ApiResponse error_response(int status, std::string_view code, std::string_view detail = {});

}  // namespace lalog::server
