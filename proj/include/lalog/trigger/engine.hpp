#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "lalog/auth/activity_config.hpp"
#include "lalog/store/event_store.hpp"
#include "lalog/trigger/binding.hpp"
#include "lalog/trigger/mail.hpp"

namespace lalog::trigger {

enum class OutcomeStatus { sent, failed };

struct TriggerOutcome {
  std::string activity_id;
  model::SessionId session_id;
  std::uint64_t seq = 0;
  std::size_t binding_index = 0;
  TriggerKind kind = TriggerKind::send_mail;
  OutcomeStatus status = OutcomeStatus::sent;
  int attempts = 0;
  /// Gateway error text for failed outcomes.
  std::string detail;
};

struct DispatchOptions {
  /// Absolute service URL used in deep links, without trailing slash.
  std::string base_url;
  /// Terminally failed messages are written here; empty disables dead-lettering.
  std::filesystem::path dead_letter_dir;
  std::chrono::milliseconds retry_delay{1000};
  std::function<Instant()> clock = now_utc;
};

/// `<base_url>/activities/<a>/sessions/<sid>?until=<seq>`
std::string session_deep_link(std::string_view base_url, std::string_view activity_id, const model::SessionId& sid,
                              std::uint64_t seq);

/// Builds the tutor email for a help request. Uses the binding's `to` param, else the first teacher.
NotificationMessage compose_help_request(const model::StoredEvent& stored, std::size_t binding_index,
                                         const TriggerBinding& binding, const auth::ActivityConfig& cfg,
                                         std::string_view base_url, Instant now);

/// Sends, retries once, dead-letters on terminal failure, and scrubs learner_email in either case.
TriggerOutcome send_mail_action(const model::StoredEvent& stored, std::size_t binding_index,
                                const TriggerBinding& binding, const auth::ActivityConfig& cfg,
                                const DispatchOptions& options, MailGateway& mail, store::EventStore& store);

/// Runs every matching binding in binding order. Events still carrying a learner_email
/// afterwards are scrubbed even when no binding handled them.
std::vector<TriggerOutcome> dispatch(const model::StoredEvent& stored, const auth::ActivityConfig& cfg,
                                     const DispatchOptions& options, MailGateway& mail, store::EventStore& store);

/// Background dispatcher fed by the store's append listener. Each (event, binding)
/// pair executes at most once per engine instance.
class TriggerEngine {
 public:
  using ConfigLookup = std::function<const auth::ActivityConfig*(const std::string& activity_id)>;

  TriggerEngine(store::EventStore& store, MailGateway& mail, ConfigLookup configs, DispatchOptions options,
                std::size_t workers = 2);
  ~TriggerEngine();
  TriggerEngine(const TriggerEngine&) = delete;
  TriggerEngine& operator=(const TriggerEngine&) = delete;

  /// Queues an event; returns immediately.
  void submit(const model::StoredEvent& stored, const std::string& activity_id);
  /// Blocks until the queue is empty and no dispatch is running.
  void drain();

  std::vector<TriggerOutcome> outcomes() const;

 private:
  struct Job {
    model::StoredEvent event;
    std::string activity_id;
  };

  void run();
  void process(const Job& job);

  store::EventStore& store_;
  MailGateway& mail_;
  ConfigLookup configs_;
  DispatchOptions options_;

  mutable std::mutex mutex_;
  std::condition_variable work_cv_;
  std::condition_variable idle_cv_;
  std::deque<Job> queue_;
  std::size_t running_ = 0;
  bool stopping_ = false;
  std::set<std::tuple<model::SessionId, std::uint64_t, std::size_t>> executed_;
  std::vector<TriggerOutcome> outcomes_;
  std::vector<std::thread> threads_;
};

}  // namespace lalog::trigger
