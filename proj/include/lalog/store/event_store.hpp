#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "lalog/auth/launch.hpp"
#include "lalog/model/event.hpp"
#include "lalog/model/validate.hpp"

namespace lalog::store {

class StoreError : public std::runtime_error {
 public:
  enum class Code { unknown_session, unknown_activity, storage_failure, corrupt_stream, conflict };

  StoreError(Code code, const std::string& detail, std::uint64_t position = 0);

  Code code() const noexcept { return code_; }
  /// Byte offset of the problem, for corrupt_stream.
  std::uint64_t position() const noexcept { return position_; }

 private:
  Code code_;
  std::uint64_t position_;
};

struct Appended {
  model::StoredEvent event;
};
/// The session opted out; nothing was persisted.
struct Discarded {};
using AppendResult = std::variant<Appended, Discarded>;

/// Half-open interval [start, end).
struct TimeRange {
  Instant start{};
  Instant end{};
};

struct AggregateFilter {
  std::string activity_id;
  std::optional<auth::Pseudonym> pseudonym;
  std::optional<std::string> type_pattern;
  std::optional<std::string> exercise;
  std::optional<TimeRange> range;
};

struct Page {
  std::size_t offset = 0;
  std::size_t limit = 50;
};

struct UserRow {
  auth::Pseudonym pseudonym;
  std::size_t session_count = 0;
  Instant last_active{};
  bool operator==(const UserRow&) const = default;
};

struct SessionRow {
  model::SessionId session_id;
  auth::Pseudonym pseudonym;
  Instant started_at{};
  std::size_t event_count = 0;
  bool operator==(const SessionRow&) const = default;
};

struct ExerciseCell {
  std::size_t attempts = 0;
  std::size_t successes = 0;
  std::size_t failures = 0;
  Instant last_attempt_at{};
  bool operator==(const ExerciseCell&) const = default;
};

/// (pseudonym digits, exercise) -> tallies over `feedback` events.
using ExerciseProgressMatrix = std::map<std::pair<std::string, std::string>, ExerciseCell>;

enum class Bucket { hour, day, week };
std::optional<Bucket> bucket_from_string(std::string_view text);
/// Start of the bucket containing `t`; weeks start on Monday 00:00 UTC.
Instant bucket_start(Instant t, Bucket bucket);

struct TimelinePoint {
  Instant bucket_start{};
  std::size_t event_count = 0;
  std::size_t session_count = 0;
  bool operator==(const TimelinePoint&) const = default;
};

class AppendLog;

/// Ordered event persistence with aggregate queries. Aggregates are answered
/// from a compact per-activity fact table, never by decoding stored events.
///
/// Sessions that opted out exist (so their tokens resolve) but never hold
/// events and are invisible to every listing and aggregate.
class EventStore {
 public:
  using AppendListener = std::function<void(const model::StoredEvent&, const std::string& activity_id)>;

  static std::unique_ptr<EventStore> in_memory();
  /// Opens or creates a single-file append log. Throws StoreError.
  static std::unique_ptr<EventStore> open(const std::filesystem::path& file);

  ~EventStore();
  EventStore(const EventStore&) = delete;
  EventStore& operator=(const EventStore&) = delete;

  void register_activity(const std::string& activity_id);
  bool has_activity(const std::string& activity_id) const;

  void add_session(const auth::Session& session);
  std::optional<auth::Session> find_session(const model::SessionId& id) const;

  /// Called after every durable append, outside the store's locks.
  void set_append_listener(AppendListener listener);

  /// Assigns the next per-session seq and returns only after the write is durable.
  AppendResult append(const model::SessionId& session_id, model::ValidatedEvent event, Instant now);

  std::vector<model::StoredEvent> session_events(const model::SessionId& session_id,
                                                 std::optional<std::uint64_t> until = std::nullopt) const;
  std::optional<model::StoredEvent> find_event(const model::SessionId& session_id, std::uint64_t seq) const;

  /// Durably removes fields from a stored event, leaving no copy of their bytes in the log.
  model::StoredEvent redact(const model::SessionId& session_id, std::uint64_t seq,
                            const std::vector<std::string>& field_names);

  std::vector<UserRow> list_users(const std::string& activity_id) const;
  std::vector<SessionRow> list_sessions(const std::string& activity_id, const std::optional<auth::Pseudonym>& pseudonym,
                                        Page page) const;
  std::size_t count_events(const AggregateFilter& filter) const;
  ExerciseProgressMatrix exercise_stats(const std::string& activity_id) const;
  std::vector<TimelinePoint> timeline(const std::string& activity_id, Bucket bucket, TimeRange range) const;
  /// Ordered by (server_timestamp, session_id, seq).
  std::vector<model::StoredEvent> events_by_type(const std::string& activity_id, const std::string& type_pattern,
                                                 Page page) const;

  /// Session manifest followed by canonical wire documents (docs/export-format.md).
  void export_all(const std::string& activity_id, std::ostream& out) const;
  /// Loads an exported activity. Throws StoreError corrupt_stream with the byte position,
  /// or conflict when the activity already holds sessions. Nothing is kept on failure.
  void import(std::istream& in);

 private:
  struct SessionState;
  struct ActivityState;
  struct Fact;

  explicit EventStore(std::unique_ptr<AppendLog> log);

  ActivityState& activity_locked(const std::string& activity_id);
  const ActivityState& activity_checked(const std::string& activity_id) const;
  SessionState* session_shared(const model::SessionId& id) const;
  void insert_session_locked(const auth::Session& session);
  void insert_event_locked(SessionState& session, model::StoredEvent event);
  void replay();

  std::unique_ptr<AppendLog> log_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, std::unique_ptr<ActivityState>> activities_;
  std::unordered_map<model::SessionId, std::unique_ptr<SessionState>, model::SessionIdHash> sessions_;
  AppendListener listener_;
};

/// Reads an export stream into a fresh in-memory store.
std::unique_ptr<EventStore> import_stream(std::istream& in);

}  // namespace lalog::store
