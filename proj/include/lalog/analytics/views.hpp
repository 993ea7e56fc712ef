#pragma once

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "lalog/analytics/renderers.hpp"
#include "lalog/auth/activity_config.hpp"
#include "lalog/store/event_store.hpp"

namespace lalog::analytics {

inline constexpr std::string_view kRedacted = "(redacted)";

struct RenderedItem {
  std::uint64_t seq = 0;
  Instant server_timestamp{};
  Instant client_timestamp{};
  std::string event_type;
  std::string exercise;
  std::string renderer_id;
  PayloadShape shape = PayloadShape::generic_field_table;
  nlohmann::json payload;
};

struct SessionViewModel {
  std::string activity_id;
  model::SessionId session_id;
  auth::Pseudonym pseudonym;
  Instant started_at{};
  std::optional<std::uint64_t> until;
  /// Events in the whole session, independent of `until`.
  std::size_t total_events = 0;
  std::vector<RenderedItem> items;
};

/// Base of blob locators: `/activities/<a>/sessions/<sid>`; blobs live under `/blobs/<seq>/<field>`.
std::string session_path(std::string_view activity_id, const model::SessionId& sid);

/// Renders one stored event. learner_email and every redacted field appear as "(redacted)".
RenderedItem render_event(const model::StoredEvent& event, const std::string& activity_id,
                          const RendererRegistry& registry);

/// Throws StoreError unknown_session.
SessionViewModel build_session_view(const store::EventStore& store, const model::SessionId& session_id,
                                    std::optional<std::uint64_t> until, const RendererRegistry& registry);

enum class CellStatus { no_attempt, attempted, succeeded, failed };
std::string_view to_string(CellStatus status);

/// Success dominates failure, failure dominates a bare attempt.
CellStatus cell_status(const store::ExerciseCell& cell);

struct ExerciseRow {
  auth::Pseudonym pseudonym;
  std::vector<CellStatus> cells;
  std::vector<store::ExerciseCell> tallies;
};

struct ExerciseTable {
  std::vector<std::string> columns;
  std::vector<ExerciseRow> rows;
};

/// Rows are every visible learner sorted by pseudonym; columns follow cfg.exercise_order, then
/// other exercises seen in feedback alphabetically. Feedback without an exercise has no column.
ExerciseTable build_exercise_table(const store::EventStore& store, const auth::ActivityConfig& cfg);
/// Same table from an already computed matrix; used to check purity.
ExerciseTable exercise_table_from(const store::ExerciseProgressMatrix& matrix, const std::vector<store::UserRow>& users,
                                  const std::vector<std::string>& exercise_order);

struct DashboardTotals {
  std::size_t users = 0;
  std::size_t sessions = 0;
  std::size_t events = 0;
  std::size_t help_requests = 0;
  bool operator==(const DashboardTotals&) const = default;
};

struct DashboardModel {
  std::string activity_id;
  std::string course_label;
  DashboardTotals totals;
  std::vector<store::SessionRow> recent_sessions;
  /// Seven daily buckets ending with the day containing `now`, zero-filled.
  std::vector<store::TimelinePoint> timeline_7d;
};

inline constexpr std::size_t kRecentSessions = 20;

DashboardModel build_dashboard(const store::EventStore& store, const auth::ActivityConfig& cfg, Instant now);

struct TimelineSeries {
  store::Bucket bucket = store::Bucket::day;
  std::optional<store::TimeRange> range;
  std::vector<store::TimelinePoint> points;
};

/// With a range, empty buckets inside it are included (up to 10000 points); without one,
/// only non-empty buckets are returned.
TimelineSeries build_timeline(const store::EventStore& store, const std::string& activity_id, store::Bucket bucket,
                              std::optional<store::TimeRange> range);

struct EventListingItem {
  model::SessionId session_id;
  auth::Pseudonym pseudonym;
  /// Deep link into the session prefix ending at this event.
  std::string session_link;
  RenderedItem item;
};

std::vector<EventListingItem> build_event_listing(const store::EventStore& store, const std::string& activity_id,
                                                  const std::string& type_pattern, store::Page page,
                                                  const RendererRegistry& registry);

// JSON renderings used by the read API (docs/api.md).
nlohmann::json to_json(const RenderedItem& item);
nlohmann::json to_json(const SessionViewModel& view);
nlohmann::json to_json(const ExerciseTable& table);
nlohmann::json to_json(const DashboardModel& dashboard);
nlohmann::json to_json(const TimelineSeries& series);
nlohmann::json to_json(const std::vector<EventListingItem>& listing);
nlohmann::json to_json(const std::vector<store::UserRow>& users);
nlohmann::json to_json(const std::vector<store::SessionRow>& sessions);

}  // namespace lalog::analytics
