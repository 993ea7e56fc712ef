#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lalog/auth/activity_config.hpp"
#include "lalog/auth/launch.hpp"
#include "lalog/model/event.hpp"
#include "lalog/server/service.hpp"

// Synthetic course data: users launch sessions and emit events over one term.
namespace lalog::loadgen {

struct Options {
  int users = 156;
  int sessions = 965;
  int events = 24655;
  int help_requests = 11;
  std::uint64_t seed = 1;
  Instant term_start = *parse_iso8601("2011-10-17T08:00:00.000Z");
  std::chrono::days term_length{112};
  /// Exercise names, in sheet order. Earlier exercises get more traffic.
  std::vector<std::string> exercises = {"ex1", "ex2", "ex3", "ex4", "ex5", "ex6", "ex7", "ex8"};
  /// Probability that a feedback verdict is "success", per exercise; the last entry
  /// repeats for later exercises. Failures take 3/4 of the remainder, partial the rest.
  std::vector<double> success_rate = {0.8, 0.7, 0.55, 0.4, 0.3, 0.2, 0.15, 0.1};
};

/// Throws std::invalid_argument for impossible combinations.
void check(const Options& options);

struct PlannedEvent {
  Instant at{};
  model::EventEnvelope envelope;
};

struct PlannedSession {
  std::size_t user = 0;
  Instant launch_at{};
  std::vector<PlannedEvent> events;
};

struct Plan {
  std::vector<std::string> user_refs;
  std::vector<std::string> user_emails;
  std::vector<PlannedSession> sessions;
  std::size_t event_count() const;
};

/// Deterministic for a given Options value.
Plan make_plan(const Options& options);

/// Form fields for POST /activities/{id}/sessions.
std::multimap<std::string, std::string> launch_form(const auth::LaunchRequest& request);
/// Signed launch for `user_ref` from the activity's first whitelisted origin.
auth::LaunchRequest signed_launch(const auth::ActivityConfig& cfg, const std::string& user_ref, Instant issued_at,
                                  const std::string& nonce_hex, bool opt_out = false);

struct Report {
  std::size_t sessions_launched = 0;
  std::size_t events_accepted = 0;
  std::size_t help_requests = 0;
  std::size_t retries = 0;
  std::size_t failures = 0;
  double seconds = 0;
  std::vector<std::string> errors;  // first few failures, for diagnostics
};

/// Externally driven time for direct runs.
class SyntheticClock {
 public:
  Instant now() const { return from_unix_millis(ms_.load()); }
  void set(Instant t) { ms_.store(to_unix_millis(t)); }
  std::function<Instant()> source() {
    return [this] { return now(); };
  }

 private:
  std::atomic<std::int64_t> ms_{0};
};

/// Replays the plan in global time order through an in-process Service whose clock is `clock`.
Report run_direct(const Plan& plan, const auth::ActivityConfig& cfg, server::Service& service, SyntheticClock& clock,
                  std::uint64_t seed);

struct HttpRunOptions {
  /// Keep at or below the server's HTTP thread count: idle keep-alive connections hold a thread each.
  std::size_t workers = 8;
  /// Per-session pacing; stays under the server's per-session limit.
  double events_per_second = 40.0;
  int max_attempts = 8;
};

/// Sends the plan to a running server. Launch times use the wall clock; event
/// client timestamps follow the plan.
Report run_http(const Plan& plan, const auth::ActivityConfig& cfg, const std::string& base_url, std::uint64_t seed,
                const HttpRunOptions& options = {});

}  // namespace lalog::loadgen
