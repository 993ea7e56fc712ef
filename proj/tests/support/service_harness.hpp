#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <fstream>
#include <memory>
#include <mutex>
#include <random>
#include <sstream>
#include <string>

#include "temp_dir.hpp"
#include "lalog/common/crypto.hpp"
#include "lalog/loadgen/loadgen.hpp"
#include "lalog/server/service.hpp"
#include "lalog/wire/codec.hpp"

namespace lalog::testing {

inline const Instant kHarnessStart = *parse_iso8601("2012-01-16T09:00:00.000Z");

inline auth::ActivityConfig harness_activity(const std::string& id, const std::string& teacher, std::uint8_t key_byte) {
  auth::ActivityConfig cfg;
  cfg.activity_id = id;
  cfg.course_label = "Course " + id;
  cfg.application_key = std::vector<std::uint8_t>(32, key_byte);
  cfg.pseudonym_salt = std::vector<std::uint8_t>(16, static_cast<std::uint8_t>(key_byte + 1));
  cfg.host_whitelist = {"https://lms.example.edu"};
  cfg.teacher_principals = {teacher};
  cfg.trigger_bindings = {{id, "helprequest", trigger::TriggerKind::send_mail, {}}};
  cfg.exercise_order = {"e1", "e2", "e3"};
  return cfg;
}

/// Mail gateway that never returns until released.
class BlockingGateway : public trigger::MailGateway {
 public:
  void send(const trigger::NotificationMessage&) override {
    std::unique_lock lock(mutex_);
    ++entered_;
    released_cv_.wait(lock, [this] { return released_; });
  }
  void release() {
    std::lock_guard lock(mutex_);
    released_ = true;
    released_cv_.notify_all();
  }
  int entered() {
    std::lock_guard lock(mutex_);
    return entered_;
  }

 private:
  std::mutex mutex_;
  std::condition_variable released_cv_;
  bool released_ = false;
  int entered_ = 0;
};

struct HarnessOptions {
  bool file_store = false;
  double events_per_second = 1e6;
  std::size_t max_body_bytes = 6 * 1024 * 1024;
  bool static_assets = true;
  /// Replaces the outbox gateway.
  std::unique_ptr<trigger::MailGateway> mail;
};

/// In-process Service over two activities ("algebra" taught by alice, "geometry"
/// taught by bob) with a controllable clock and an outbox in a temp dir.
class ServiceHarness {
 public:
  explicit ServiceHarness(HarnessOptions options = {}) {
    clock_ms_ = to_unix_millis(kHarnessStart);
    algebra = harness_activity("algebra", "alice@example.edu", 0x11);
    geometry = harness_activity("geometry", "bob@example.edu", 0x22);
    outbox = dir.path() / "outbox";
    data_file = dir.path() / "events.log";
    web = dir.path() / "web";
    std::filesystem::create_directories(web / "assets");
    std::ofstream(web / "index.html") << "<!doctype html><title>console</title>";
    std::ofstream(web / "assets" / "app.js") << "console.log('hi');";
    std::ofstream(web / ".secret") << "hidden";
    std::ofstream(dir.path() / "outside.txt") << "outside";
    options_ = std::move(options);
    start();
  }

  ~ServiceHarness() { service.reset(); }

  /// Rebuilds the Service over the same store file (file_store only).
  void restart() {
    service.reset();
    start();
  }

  Instant now() const { return from_unix_millis(clock_ms_.load()); }
  void advance(std::chrono::milliseconds d) { clock_ms_ += d.count(); }

  std::string teacher_token(const std::string& principal, std::chrono::hours ttl = std::chrono::hours(1)) const {
    return auth::IdentityVerifier(secret()).mint(principal, now() + ttl);
  }

  server::ApiResponse launch_raw(const auth::ActivityConfig& cfg, const std::string& user_ref, bool opt_out = false) {
    server::ApiRequest r;
    r.method = "POST";
    r.path = "/activities/" + cfg.activity_id + "/sessions";
    r.form = loadgen::launch_form(loadgen::signed_launch(cfg, user_ref, now(), fresh_nonce(), opt_out));
    return service->handle(r);
  }

  /// Launches and returns the session token; fails the test on any other status.
  std::string launch(const auth::ActivityConfig& cfg, const std::string& user_ref, bool opt_out = false) {
    const auto res = launch_raw(cfg, user_ref, opt_out);
    if (res.status != 201) throw std::runtime_error("launch failed: " + std::to_string(res.status) + " " + res.body);
    return nlohmann::json::parse(res.body).at("session_id").get<std::string>();
  }

  server::ApiResponse post_raw(const std::string& token, std::string body) {
    server::ApiRequest r;
    r.method = "POST";
    r.path = "/sessions/" + token + "/events";
    r.headers["content-type"] = "application/xml";
    r.body = std::move(body);
    return service->handle(r);
  }

  server::ApiResponse post(const std::string& token, const model::EventEnvelope& e) {
    return post_raw(token, wire::encode(e));
  }

  /// `target` may carry a query string; values must not need percent-decoding.
  server::ApiResponse get(const std::string& target, const std::string& bearer = {},
                          const std::string& accept = "application/json") {
    server::ApiRequest r;
    const auto q = target.find('?');
    r.path = target.substr(0, q);
    if (q != std::string::npos) {
      std::istringstream params(target.substr(q + 1));
      std::string kv;
      while (std::getline(params, kv, '&')) {
        const auto eq = kv.find('=');
        r.query.emplace(kv.substr(0, eq), eq == std::string::npos ? "" : kv.substr(eq + 1));
      }
    }
    if (!bearer.empty()) r.headers["authorization"] = "Bearer " + bearer;
    if (!accept.empty()) r.headers["accept"] = accept;
    return service->handle(r);
  }

  std::vector<std::filesystem::path> outbox_files() const {
    std::vector<std::filesystem::path> out;
    if (!std::filesystem::exists(outbox)) return out;
    for (const auto& e : std::filesystem::directory_iterator(outbox)) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
  }

  static std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  TempDir dir;
  auth::ActivityConfig algebra;
  auth::ActivityConfig geometry;
  std::filesystem::path outbox;
  std::filesystem::path data_file;
  std::filesystem::path web;
  std::unique_ptr<server::Service> service;

 private:
  static std::vector<std::uint8_t> secret() { return std::vector<std::uint8_t>(32, 0x5a); }

  std::string fresh_nonce() {
    std::vector<std::uint8_t> b(16);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng_());
    return crypto::to_hex(b);
  }

  void start() {
    server::ServiceParts parts;
    parts.activities = {algebra, geometry};
    parts.store = options_.file_store ? store::EventStore::open(data_file) : store::EventStore::in_memory();
    if (options_.mail) {
      parts.mail = std::move(options_.mail);
    } else {
      parts.mail = std::make_unique<trigger::OutboxGateway>(outbox);
    }
    parts.identity_secret = secret();
    parts.base_url = "https://logs.example.org";
    if (options_.static_assets) parts.static_dir = web;
    parts.dead_letter_dir = dir.path() / "dead-letter";
    parts.max_body_bytes = options_.max_body_bytes;
    parts.events_per_second = options_.events_per_second;
    parts.mail_retry_delay = std::chrono::milliseconds(0);
    parts.clock = [this] { return now(); };
    service = std::make_unique<server::Service>(std::move(parts));
  }

  HarnessOptions options_;
  std::atomic<std::int64_t> clock_ms_{0};
  std::mt19937_64 rng_{42};
};

inline model::EventEnvelope action_event(Instant at, const std::string& name = "clicked", const std::string& ex = "e1") {
  return {"action", at, ex, {{"action_name", model::FieldValue::string(name)}}};
}

inline model::EventEnvelope feedback_event(Instant at, const std::string& verdict, const std::string& ex) {
  return {"feedback", at, ex,
          {{"verdict", model::FieldValue::string(verdict)}, {"message", model::FieldValue::string("checked")}}};
}

inline model::EventEnvelope help_event(Instant at, const std::string& question, const std::string& email,
                                       const std::string& ex = "e1") {
  return {"helprequest", at, ex,
          {{"question_text", model::FieldValue::string(question)}, {"learner_email", model::FieldValue::string(email)}}};
}

inline model::EventEnvelope image_event(Instant at, std::vector<std::uint8_t> bytes) {
  return {"image", at, "e1", {{"image", model::FieldValue::blob("image/png", std::move(bytes))}}};
}

}  // namespace lalog::testing
