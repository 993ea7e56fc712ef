#include "lalog/analytics/views.hpp"

#include <algorithm>
#include <set>

#include "lalog/model/validate.hpp"

namespace lalog::analytics {

using nlohmann::json;

namespace {

constexpr std::string_view kEmailField = "learner_email";

class EventRenderer {
 public:
  EventRenderer(const model::StoredEvent& e, const std::string& activity_id)
      : event_(e), blob_base_(session_path(activity_id, e.session_id) + "/blobs/" + std::to_string(e.seq) + "/") {}

  bool redacted(std::string_view name) const {
    return name == kEmailField ||
           std::find(event_.redactions.begin(), event_.redactions.end(), name) != event_.redactions.end();
  }

  /// String field value, "(redacted)", or empty when absent.
  json text(std::string_view name) {
    consumed_.insert(std::string(name));
    if (redacted(name)) return kRedacted;
    const auto* v = event_.envelope.find(name);
    if (v == nullptr) return nullptr;
    if (v->kind() == model::FieldKind::string) return v->as_string();
    return value(*v, std::string(name), true);
  }

  json blob(std::string_view name) {
    consumed_.insert(std::string(name));
    if (redacted(name)) return kRedacted;
    const auto* v = event_.envelope.find(name);
    if (v == nullptr) return nullptr;
    return value(*v, std::string(name), true);
  }

  /// Every field not consumed by the card, then markers for redacted names.
  json remaining_fields() {
    json out = json::array();
    for (const auto& f : event_.envelope.fields) {
      if (consumed_.contains(f.name)) continue;
      if (redacted(f.name)) {
        out.push_back(redacted_entry(f.name));
      } else {
        out.push_back(field_entry(f, true));
      }
    }
    for (const auto& name : event_.redactions) {
      if (consumed_.contains(name) || event_.envelope.find(name) != nullptr) continue;
      out.push_back(redacted_entry(name));
    }
    return out;
  }

 private:
  static json redacted_entry(const std::string& name) {
    return {{"name", name}, {"kind", "redacted"}, {"value", kRedacted}};
  }

  json field_entry(const model::Field& f, bool top_level) const {
    return {{"name", f.name}, {"kind", model::to_string(f.value.kind())}, {"value", value(f.value, f.name, top_level)}};
  }

  json value(const model::FieldValue& v, const std::string& name, bool top_level) const {
    switch (v.kind()) {
      case model::FieldKind::string: return v.as_string();
      case model::FieldKind::number: return v.as_number();
      case model::FieldKind::date: return format_iso8601(v.as_date());
      case model::FieldKind::blob: {
        json b = {{"media_type", v.as_blob().media_type}, {"size", v.as_blob().bytes.size()}};
        if (top_level) b["href"] = blob_base_ + name;
        return b;
      }
      case model::FieldKind::kvlist: {
        json list = json::array();
        for (const auto& f : v.as_kvlist()) {
          if (f.name == kEmailField) list.push_back(redacted_entry(f.name));
          else list.push_back(field_entry(f, false));
        }
        return list;
      }
    }
    return nullptr;
  }

  const model::StoredEvent& event_;
  std::string blob_base_;
  std::set<std::string> consumed_;
};

json iso(Instant t) { return format_iso8601(t); }

}  // namespace

std::string session_path(std::string_view activity_id, const model::SessionId& sid) {
  std::string p = "/activities/";
  p += activity_id;
  p += "/sessions/";
  p += sid.hex();
  return p;
}

RenderedItem render_event(const model::StoredEvent& event, const std::string& activity_id,
                          const RendererRegistry& registry) {
  const auto& d = registry.resolve(event.envelope.event_type);
  RenderedItem item;
  item.seq = event.seq;
  item.server_timestamp = event.server_timestamp;
  item.client_timestamp = event.envelope.client_timestamp;
  item.event_type = event.envelope.event_type;
  item.exercise = event.envelope.exercise;
  item.renderer_id = d.renderer_id;
  item.shape = d.shape;

  EventRenderer r(event, activity_id);
  json p = json::object();
  switch (d.shape) {
    case PayloadShape::text_line: p["text"] = r.text("action_name"); break;
    case PayloadShape::question_card: p["question"] = r.text("question_text"); break;
    case PayloadShape::image_card: p["image"] = r.blob("image"); break;
    case PayloadShape::feedback_card: {
      p["verdict"] = r.text("verdict");
      // Badge is the verdict when it is one of the known values.
      const auto& v = p["verdict"];
      const bool known = v.is_string() && (v == model::kVerdictSuccess || v == model::kVerdictFailure ||
                                           v == model::kVerdictPartial);
      p["badge"] = known ? v : json("unknown");
      p["message"] = r.text("message");
      break;
    }
    case PayloadShape::help_request_card:
      p["question"] = r.text("question_text");
      p["learner_email"] = r.text(kEmailField);
      p["snapshot"] = r.blob("snapshot");
      break;
    case PayloadShape::generic_field_table: break;
  }
  p["fields"] = r.remaining_fields();
  item.payload = std::move(p);
  return item;
}

SessionViewModel build_session_view(const store::EventStore& store, const model::SessionId& session_id,
                                    std::optional<std::uint64_t> until, const RendererRegistry& registry) {
  const auto session = store.find_session(session_id);
  if (!session) throw store::StoreError(store::StoreError::Code::unknown_session, "unknown session");
  SessionViewModel view;
  view.activity_id = session->activity_id;
  view.session_id = session_id;
  view.pseudonym = session->pseudonym;
  view.started_at = session->started_at;
  view.until = until;
  const auto events = store.session_events(session_id);
  view.total_events = events.size();
  for (const auto& e : events) {
    if (until && e.seq > *until) break;
    view.items.push_back(render_event(e, session->activity_id, registry));
  }
  return view;
}

std::string_view to_string(CellStatus status) {
  switch (status) {
    case CellStatus::no_attempt: return "no_attempt";
    case CellStatus::attempted: return "attempted";
    case CellStatus::succeeded: return "succeeded";
    case CellStatus::failed: return "failed";
  }
  return "no_attempt";
}

CellStatus cell_status(const store::ExerciseCell& cell) {
  if (cell.successes >= 1) return CellStatus::succeeded;
  if (cell.failures >= 1) return CellStatus::failed;
  if (cell.attempts >= 1) return CellStatus::attempted;
  return CellStatus::no_attempt;
}

ExerciseTable exercise_table_from(const store::ExerciseProgressMatrix& matrix, const std::vector<store::UserRow>& users,
                                  const std::vector<std::string>& exercise_order) {
  ExerciseTable table;
  std::set<std::string> listed;
  for (const auto& ex : exercise_order) {
    if (ex.empty() || !listed.insert(ex).second) continue;
    table.columns.push_back(ex);
  }
  std::set<std::string> unseen;
  for (const auto& [key, cell] : matrix) {
    if (!key.second.empty() && !listed.contains(key.second)) unseen.insert(key.second);
  }
  table.columns.insert(table.columns.end(), unseen.begin(), unseen.end());

  std::vector<auth::Pseudonym> pseudonyms;
  for (const auto& u : users) pseudonyms.push_back(u.pseudonym);
  std::sort(pseudonyms.begin(), pseudonyms.end());
  for (const auto& p : pseudonyms) {
    ExerciseRow row;
    row.pseudonym = p;
    for (const auto& ex : table.columns) {
      const auto it = matrix.find({p.digits(), ex});
      const store::ExerciseCell cell = it != matrix.end() ? it->second : store::ExerciseCell{};
      row.cells.push_back(cell_status(cell));
      row.tallies.push_back(cell);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

ExerciseTable build_exercise_table(const store::EventStore& store, const auth::ActivityConfig& cfg) {
  return exercise_table_from(store.exercise_stats(cfg.activity_id), store.list_users(cfg.activity_id),
                             cfg.exercise_order);
}

DashboardModel build_dashboard(const store::EventStore& store, const auth::ActivityConfig& cfg, Instant now) {
  DashboardModel d;
  d.activity_id = cfg.activity_id;
  d.course_label = cfg.course_label;
  const auto users = store.list_users(cfg.activity_id);
  d.totals.users = users.size();
  for (const auto& u : users) d.totals.sessions += u.session_count;
  store::AggregateFilter all{cfg.activity_id, std::nullopt, std::nullopt, std::nullopt, std::nullopt};
  d.totals.events = store.count_events(all);
  all.type_pattern = "helprequest";
  d.totals.help_requests = store.count_events(all);
  d.recent_sessions = store.list_sessions(cfg.activity_id, std::nullopt, {0, kRecentSessions});

  const Instant today = store::bucket_start(now, store::Bucket::day);
  const store::TimeRange week{today - std::chrono::days(6), today + std::chrono::days(1)};
  d.timeline_7d = build_timeline(store, cfg.activity_id, store::Bucket::day, week).points;
  return d;
}

namespace {

Instant next_bucket(Instant start, store::Bucket b) {
  switch (b) {
    case store::Bucket::hour: return start + std::chrono::hours(1);
    case store::Bucket::day: return start + std::chrono::days(1);
    case store::Bucket::week: return start + std::chrono::weeks(1);
  }
  return start;
}

}  // namespace

TimelineSeries build_timeline(const store::EventStore& store, const std::string& activity_id, store::Bucket bucket,
                              std::optional<store::TimeRange> range) {
  TimelineSeries s;
  s.bucket = bucket;
  s.range = range;
  if (!range) {
    s.points = store.timeline(activity_id, bucket, {Instant::min(), Instant::max()});
    return s;
  }
  const auto sparse = store.timeline(activity_id, bucket, *range);
  if (!(range->start < range->end)) return s;
  constexpr std::size_t kMaxPoints = 10000;
  std::size_t n = 0;
  for (Instant t = store::bucket_start(range->start, bucket); t < range->end && n <= kMaxPoints;
       t = next_bucket(t, bucket)) {
    ++n;
  }
  if (n > kMaxPoints) {
    s.points = sparse;
    return s;
  }
  auto it = sparse.begin();
  for (Instant t = store::bucket_start(range->start, bucket); t < range->end; t = next_bucket(t, bucket)) {
    if (it != sparse.end() && it->bucket_start == t) {
      s.points.push_back(*it++);
    } else {
      s.points.push_back({t, 0, 0});
    }
  }
  return s;
}

std::vector<EventListingItem> build_event_listing(const store::EventStore& store, const std::string& activity_id,
                                                  const std::string& type_pattern, store::Page page,
                                                  const RendererRegistry& registry) {
  std::vector<EventListingItem> out;
  for (const auto& e : store.events_by_type(activity_id, type_pattern, page)) {
    const auto session = store.find_session(e.session_id);
    if (!session) continue;
    EventListingItem item;
    item.session_id = e.session_id;
    item.pseudonym = session->pseudonym;
    item.session_link = session_path(activity_id, e.session_id) + "?until=" + std::to_string(e.seq);
    item.item = render_event(e, activity_id, registry);
    out.push_back(std::move(item));
  }
  return out;
}

json to_json(const RenderedItem& item) {
  return {{"seq", item.seq},
          {"server_timestamp", iso(item.server_timestamp)},
          {"client_timestamp", iso(item.client_timestamp)},
          {"event_type", item.event_type},
          {"exercise", item.exercise},
          {"renderer_id", item.renderer_id},
          {"shape", to_string(item.shape)},
          {"payload", item.payload}};
}

json to_json(const SessionViewModel& view) {
  json items = json::array();
  for (const auto& i : view.items) items.push_back(to_json(i));
  return {{"activity_id", view.activity_id},
          {"session_id", view.session_id.hex()},
          {"pseudonym", view.pseudonym.digits()},
          {"started_at", iso(view.started_at)},
          {"until", view.until ? json(*view.until) : json(nullptr)},
          {"total_events", view.total_events},
          {"items", std::move(items)}};
}

json to_json(const ExerciseTable& table) {
  json rows = json::array();
  for (const auto& r : table.rows) {
    json cells = json::array();
    for (std::size_t i = 0; i < r.cells.size(); ++i) {
      const auto& t = r.tallies[i];
      cells.push_back({{"status", to_string(r.cells[i])},
                       {"attempts", t.attempts},
                       {"successes", t.successes},
                       {"failures", t.failures},
                       {"last_attempt_at", t.attempts > 0 ? iso(t.last_attempt_at) : json(nullptr)}});
    }
    rows.push_back({{"pseudonym", r.pseudonym.digits()}, {"cells", std::move(cells)}});
  }
  return {{"columns", table.columns}, {"rows", std::move(rows)}};
}

namespace {

json timeline_points(const std::vector<store::TimelinePoint>& points) {
  json out = json::array();
  for (const auto& p : points) {
    out.push_back({{"bucket_start", iso(p.bucket_start)}, {"events", p.event_count}, {"sessions", p.session_count}});
  }
  return out;
}

std::string_view bucket_name(store::Bucket b) {
  switch (b) {
    case store::Bucket::hour: return "hour";
    case store::Bucket::day: return "day";
    case store::Bucket::week: return "week";
  }
  return "day";
}

}  // namespace

json to_json(const DashboardModel& d) {
  return {{"activity_id", d.activity_id},
          {"course_label", d.course_label},
          {"totals",
           {{"users", d.totals.users},
            {"sessions", d.totals.sessions},
            {"events", d.totals.events},
            {"help_requests", d.totals.help_requests}}},
          {"recent_sessions", to_json(d.recent_sessions)},
          {"timeline_7d", timeline_points(d.timeline_7d)}};
}

json to_json(const TimelineSeries& s) {
  json out = {{"bucket", bucket_name(s.bucket)}, {"points", timeline_points(s.points)}};
  if (s.range) {
    out["from"] = iso(s.range->start);
    out["to"] = iso(s.range->end);
  }
  return out;
}

json to_json(const std::vector<EventListingItem>& listing) {
  json out = json::array();
  for (const auto& l : listing) {
    out.push_back({{"session_id", l.session_id.hex()},
                   {"pseudonym", l.pseudonym.digits()},
                   {"session_link", l.session_link},
                   {"item", to_json(l.item)}});
  }
  return out;
}

json to_json(const std::vector<store::UserRow>& users) {
  json out = json::array();
  for (const auto& u : users) {
    out.push_back(
        {{"pseudonym", u.pseudonym.digits()}, {"session_count", u.session_count}, {"last_active", iso(u.last_active)}});
  }
  return out;
}

json to_json(const std::vector<store::SessionRow>& sessions) {
  json out = json::array();
  for (const auto& s : sessions) {
    out.push_back({{"session_id", s.session_id.hex()},
                   {"pseudonym", s.pseudonym.digits()},
                   {"started_at", iso(s.started_at)},
                   {"event_count", s.event_count}});
  }
  return out;
}

}  // namespace lalog::analytics
