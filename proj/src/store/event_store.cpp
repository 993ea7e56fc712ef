#include "lalog/store/event_store.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "append_log.hpp"
#include "lalog/wire/codec.hpp"

namespace lalog::store {

namespace {

using model::SessionId;
using model::StoredEvent;
using Code = StoreError::Code;

enum class Verdict : std::uint8_t { none, success, failure, partial };

constexpr std::string_view kFeedbackType = "feedback";
constexpr std::string_view kExportMagic = "lalog-export 1";

Verdict verdict_of(const model::EventEnvelope& e) {
  if (e.event_type != kFeedbackType) return Verdict::none;
  const auto* v = e.find("verdict");
  if (v == nullptr || v->kind() != model::FieldKind::string) return Verdict::none;
  if (v->as_string() == model::kVerdictSuccess) return Verdict::success;
  if (v->as_string() == model::kVerdictFailure) return Verdict::failure;
  if (v->as_string() == model::kVerdictPartial) return Verdict::partial;
  return Verdict::none;
}

std::string event_payload(const StoredEvent& e) {
  ByteWriter w;
  w.raw(std::string_view(reinterpret_cast<const char*>(e.session_id.bytes().data()), 16));
  w.u64(e.seq);
  w.i64(to_unix_millis(e.server_timestamp));
  w.u32(static_cast<std::uint32_t>(e.redactions.size()));
  for (const auto& r : e.redactions) w.str(r);
  w.str(wire::encode(e.envelope));
  return w.bytes();
}

SessionId read_session_id(ByteReader& r) {
  SessionId::Bytes bytes{};
  const auto raw = r.raw(16);
  std::copy(raw.begin(), raw.end(), bytes.begin());
  return SessionId(bytes);
}

StoredEvent parse_event_payload(std::string_view payload) {
  ByteReader r(payload);
  StoredEvent e;
  e.session_id = read_session_id(r);
  e.seq = r.u64();
  e.server_timestamp = from_unix_millis(r.i64());
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) e.redactions.emplace_back(r.str());
  e.envelope = wire::decode(r.str());
  return e;
}

std::string session_payload(const auth::Session& s) {
  ByteWriter w;
  w.raw(std::string_view(reinterpret_cast<const char*>(s.session_id.bytes().data()), 16));
  w.str(s.activity_id);
  w.str(s.pseudonym.digits());
  w.i64(to_unix_millis(s.started_at));
  w.u8(s.opt_out ? 1 : 0);
  return w.bytes();
}

auth::Session parse_session_payload(std::string_view payload) {
  ByteReader r(payload);
  auth::Session s;
  s.session_id = read_session_id(r);
  s.activity_id = std::string(r.str());
  s.pseudonym = auth::Pseudonym(std::string(r.str()));
  s.started_at = from_unix_millis(r.i64());
  s.opt_out = r.u8() != 0;
  return s;
}

// Export field escaping: anything outside a safe set becomes %XX.
std::string percent_encode(std::string_view s) {
  static constexpr char hex[] = "0123456789ABCDEF";
  std::string out;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if ((u >= 'a' && u <= 'z') || (u >= 'A' && u <= 'Z') || (u >= '0' && u <= '9') || c == '_' || c == '.' ||
        c == '-' || c == '@') {
      out += c;
    } else {
      out += '%';
      out += hex[u >> 4];
      out += hex[u & 15];
    }
  }
  return out;
}

std::optional<std::string> percent_decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '%') {
      out += s[i];
      continue;
    }
    if (i + 2 >= s.size()) return std::nullopt;
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data() + i + 1, s.data() + i + 3, v, 16);
    if (ec != std::errc{} || ptr != s.data() + i + 3) return std::nullopt;
    out += static_cast<char>(v);
    i += 2;
  }
  return out;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

template <typename T>
std::optional<T> parse_uint(std::string_view s) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

StoreError::StoreError(Code code, const std::string& detail, std::uint64_t position)
    : std::runtime_error(detail), code_(code), position_(position) {}

std::optional<Bucket> bucket_from_string(std::string_view text) {
  if (text == "hour") return Bucket::hour;
  if (text == "day") return Bucket::day;
  if (text == "week") return Bucket::week;
  return std::nullopt;
}

Instant bucket_start(Instant t, Bucket bucket) {
  using namespace std::chrono;
  switch (bucket) {
    case Bucket::hour: return floor<hours>(t);
    case Bucket::day: return floor<days>(t);
    case Bucket::week: {
      const sys_days day = floor<days>(t);
      const unsigned since_monday = (weekday{day}.c_encoding() + 6) % 7;
      return day - days{since_monday};
    }
  }
  return t;
}

struct EventStore::Fact {
  SessionState* session;
  std::uint64_t seq;
  Instant at;
  std::uint32_t type_id;
  std::uint32_t exercise_id;
  Verdict verdict;
};

struct EventStore::SessionState {
  auth::Session info;
  ActivityState* activity = nullptr;
  std::vector<StoredEvent> events;
  std::vector<std::uint64_t> offsets;
  std::vector<std::size_t> fact_index;
  Instant last_active{};
  std::mutex write_mutex;
};

struct EventStore::ActivityState {
  struct UserAgg {
    std::size_t session_count = 0;
    Instant last_active{};
  };

  std::string id;
  std::vector<Fact> facts;
  std::vector<std::string> type_names;
  std::unordered_map<std::string, std::uint32_t> type_ids;
  std::vector<std::string> exercise_names;
  std::unordered_map<std::string, std::uint32_t> exercise_ids;
  std::vector<SessionState*> sessions;
  std::map<std::string, UserAgg> users;

  static std::uint32_t intern(std::vector<std::string>& names, std::unordered_map<std::string, std::uint32_t>& ids,
                              const std::string& value) {
    auto [it, inserted] = ids.try_emplace(value, static_cast<std::uint32_t>(names.size()));
    if (inserted) names.push_back(value);
    return it->second;
  }

  std::vector<bool> type_mask(const std::string& pattern) const {
    std::vector<bool> mask(type_names.size());
    for (std::size_t i = 0; i < type_names.size(); ++i) mask[i] = model::match_type(type_names[i], pattern);
    return mask;
  }
};

EventStore::EventStore(std::unique_ptr<AppendLog> log) : log_(std::move(log)) {}
EventStore::~EventStore() = default;

std::unique_ptr<EventStore> EventStore::in_memory() { return std::unique_ptr<EventStore>(new EventStore(nullptr)); }

std::unique_ptr<EventStore> EventStore::open(const std::filesystem::path& file) {
  std::unique_ptr<EventStore> store(new EventStore(AppendLog::open(file)));
  store->replay();
  return store;
}

void EventStore::replay() {
  std::unique_lock lock(mutex_);
  struct Live {
    std::uint64_t offset;
    StoredEvent event;
  };
  std::vector<SessionId> order;
  std::unordered_map<SessionId, std::map<std::uint64_t, Live>, model::SessionIdHash> pending;
  std::vector<std::uint64_t> stale;

  log_->scan([&](RecordType type, std::uint64_t offset, std::string_view payload) {
    try {
      switch (type) {
        case RecordType::tombstone:
          break;
        case RecordType::activity:
          activity_locked(std::string(payload));
          break;
        case RecordType::session: {
          const auto session = parse_session_payload(payload);
          insert_session_locked(session);
          order.push_back(session.session_id);
          break;
        }
        case RecordType::event:
        case RecordType::replace: {
          auto event = parse_event_payload(payload);
          if (!sessions_.contains(event.session_id)) {
            throw StoreError(Code::storage_failure, "event for unknown session", offset);
          }
          auto& slot = pending[event.session_id];
          auto [it, inserted] = slot.try_emplace(event.seq, Live{offset, {}});
          if (!inserted) {
            if (type != RecordType::replace) throw StoreError(Code::storage_failure, "duplicate event record", offset);
            // The superseded record survived a crash before its tombstone was written.
            stale.push_back(it->second.offset);
            it->second.offset = offset;
          }
          it->second.event = std::move(event);
          break;
        }
      }
    } catch (const StoreError&) {
      throw;
    } catch (const std::exception& e) {
      throw StoreError(Code::storage_failure, std::string("unreadable log record: ") + e.what(), offset);
    }
  });

  for (const auto& id : order) {
    auto it = pending.find(id);
    if (it == pending.end()) continue;
    auto& session = *sessions_.at(id);
    for (auto& [seq, live] : it->second) {
      if (seq != session.events.size() + 1) {
        throw StoreError(Code::storage_failure, "sequence gap in log", live.offset);
      }
      insert_event_locked(session, std::move(live.event));
      session.offsets.push_back(live.offset);
    }
  }
  for (auto offset : stale) log_->tombstone(offset);
}

EventStore::ActivityState& EventStore::activity_locked(const std::string& activity_id) {
  auto& slot = activities_[activity_id];
  if (!slot) {
    slot = std::make_unique<ActivityState>();
    slot->id = activity_id;
  }
  return *slot;
}

const EventStore::ActivityState& EventStore::activity_checked(const std::string& activity_id) const {
  auto it = activities_.find(activity_id);
  if (it == activities_.end()) throw StoreError(Code::unknown_activity, "unknown activity: " + activity_id);
  return *it->second;
}

EventStore::SessionState* EventStore::session_shared(const SessionId& id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw StoreError(Code::unknown_session, "unknown session");
  return it->second.get();
}

void EventStore::register_activity(const std::string& activity_id) {
  std::unique_lock lock(mutex_);
  if (activities_.contains(activity_id)) return;
  if (log_) log_->append(RecordType::activity, activity_id);
  activity_locked(activity_id);
}

bool EventStore::has_activity(const std::string& activity_id) const {
  std::shared_lock lock(mutex_);
  return activities_.contains(activity_id);
}

void EventStore::insert_session_locked(const auth::Session& session) {
  auto [it, inserted] = sessions_.try_emplace(session.session_id, nullptr);
  if (!inserted) throw StoreError(Code::conflict, "duplicate session id");
  auto state = std::make_unique<SessionState>();
  state->info = session;
  state->activity = &activity_locked(session.activity_id);
  state->last_active = session.started_at;
  if (!session.opt_out) {
    state->activity->sessions.push_back(state.get());
    auto& user = state->activity->users[session.pseudonym.digits()];
    ++user.session_count;
    user.last_active = std::max(user.last_active, session.started_at);
  }
  it->second = std::move(state);
}

void EventStore::add_session(const auth::Session& session) {
  std::unique_lock lock(mutex_);
  if (!activities_.contains(session.activity_id)) {
    throw StoreError(Code::unknown_activity, "unknown activity: " + session.activity_id);
  }
  if (sessions_.contains(session.session_id)) throw StoreError(Code::conflict, "duplicate session id");
  if (log_) log_->append(RecordType::session, session_payload(session));
  insert_session_locked(session);
}

std::optional<auth::Session> EventStore::find_session(const SessionId& id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second->info;
}

void EventStore::set_append_listener(AppendListener listener) {
  std::unique_lock lock(mutex_);
  listener_ = std::move(listener);
}

void EventStore::insert_event_locked(SessionState& session, StoredEvent event) {
  auto& activity = *session.activity;
  Fact fact{&session,
            event.seq,
            event.server_timestamp,
            ActivityState::intern(activity.type_names, activity.type_ids, event.envelope.event_type),
            ActivityState::intern(activity.exercise_names, activity.exercise_ids, event.envelope.exercise),
            verdict_of(event.envelope)};
  session.fact_index.push_back(activity.facts.size());
  activity.facts.push_back(fact);
  session.last_active = std::max(session.last_active, event.server_timestamp);
  auto& user = activity.users[session.info.pseudonym.digits()];
  user.last_active = std::max(user.last_active, event.server_timestamp);
  session.events.push_back(std::move(event));
}

AppendResult EventStore::append(const SessionId& session_id, model::ValidatedEvent event, Instant now) {
  SessionState* session = session_shared(session_id);
  if (session->info.opt_out) return Discarded{};

  StoredEvent stored;
  {
    std::lock_guard write(session->write_mutex);
    {
      std::shared_lock lock(mutex_);
      stored.seq = session->events.size() + 1;
      stored.server_timestamp =
          session->events.empty() ? now : std::max(now, session->events.back().server_timestamp);
    }
    stored.envelope = std::move(event).envelope();
    stored.session_id = session_id;
    std::uint64_t offset = 0;
    if (log_) offset = log_->append(RecordType::event, event_payload(stored));

    std::unique_lock lock(mutex_);
    insert_event_locked(*session, stored);
    session->offsets.push_back(offset);
  }
  AppendListener listener;
  {
    std::shared_lock lock(mutex_);
    listener = listener_;
  }
  if (listener) listener(stored, session->info.activity_id);
  return Appended{std::move(stored)};
}

std::vector<StoredEvent> EventStore::session_events(const SessionId& session_id,
                                                    std::optional<std::uint64_t> until) const {
  SessionState* session = session_shared(session_id);
  std::shared_lock lock(mutex_);
  const std::size_t n = until ? std::min<std::uint64_t>(*until, session->events.size()) : session->events.size();
  return {session->events.begin(), session->events.begin() + static_cast<std::ptrdiff_t>(n)};
}

std::optional<StoredEvent> EventStore::find_event(const SessionId& session_id, std::uint64_t seq) const {
  SessionState* session = session_shared(session_id);
  std::shared_lock lock(mutex_);
  if (seq == 0 || seq > session->events.size()) return std::nullopt;
  return session->events[seq - 1];
}

StoredEvent EventStore::redact(const SessionId& session_id, std::uint64_t seq,
                               const std::vector<std::string>& field_names) {
  SessionState* session = session_shared(session_id);
  std::lock_guard write(session->write_mutex);
  StoredEvent current;
  {
    std::shared_lock lock(mutex_);
    if (seq == 0 || seq > session->events.size()) throw StoreError(Code::unknown_session, "no such event");
    current = session->events[seq - 1];
  }
  StoredEvent redacted = model::redact(current, field_names);
  if (redacted == current) return redacted;

  std::uint64_t offset = 0;
  if (log_) {
    offset = log_->append(RecordType::replace, event_payload(redacted));
    log_->tombstone(session->offsets[seq - 1]);
  }
  std::unique_lock lock(mutex_);
  session->activity->facts[session->fact_index[seq - 1]].verdict = verdict_of(redacted.envelope);
  session->events[seq - 1] = redacted;
  session->offsets[seq - 1] = offset;
  return redacted;
}

std::vector<UserRow> EventStore::list_users(const std::string& activity_id) const {
  std::shared_lock lock(mutex_);
  const auto& activity = activity_checked(activity_id);
  std::vector<UserRow> rows;
  rows.reserve(activity.users.size());
  for (const auto& [digits, agg] : activity.users) rows.push_back({auth::Pseudonym(digits), agg.session_count, agg.last_active});
  std::sort(rows.begin(), rows.end(), [](const UserRow& a, const UserRow& b) {
    if (a.last_active != b.last_active) return a.last_active > b.last_active;
    return a.pseudonym < b.pseudonym;
  });
  return rows;
}

std::vector<SessionRow> EventStore::list_sessions(const std::string& activity_id,
                                                  const std::optional<auth::Pseudonym>& pseudonym, Page page) const {
  std::shared_lock lock(mutex_);
  const auto& activity = activity_checked(activity_id);
  std::vector<const SessionState*> matching;
  for (const SessionState* s : activity.sessions) {
    if (!pseudonym || s->info.pseudonym == *pseudonym) matching.push_back(s);
  }
  std::sort(matching.begin(), matching.end(), [](const SessionState* a, const SessionState* b) {
    if (a->info.started_at != b->info.started_at) return a->info.started_at > b->info.started_at;
    return a->info.session_id < b->info.session_id;
  });
  std::vector<SessionRow> rows;
  for (std::size_t i = page.offset; i < matching.size() && rows.size() < page.limit; ++i) {
    const auto* s = matching[i];
    rows.push_back({s->info.session_id, s->info.pseudonym, s->info.started_at, s->events.size()});
  }
  return rows;
}

std::size_t EventStore::count_events(const AggregateFilter& filter) const {
  std::shared_lock lock(mutex_);
  const auto& activity = activity_checked(filter.activity_id);
  std::vector<bool> mask;
  if (filter.type_pattern) mask = activity.type_mask(*filter.type_pattern);
  std::optional<std::uint32_t> exercise_id;
  if (filter.exercise) {
    auto it = activity.exercise_ids.find(*filter.exercise);
    if (it == activity.exercise_ids.end()) return 0;
    exercise_id = it->second;
  }
  if (!filter.pseudonym && !filter.type_pattern && !exercise_id && !filter.range) return activity.facts.size();

  std::size_t count = 0;
  for (const Fact& f : activity.facts) {
    if (filter.type_pattern && !mask[f.type_id]) continue;
    if (exercise_id && f.exercise_id != *exercise_id) continue;
    if (filter.range && (f.at < filter.range->start || f.at >= filter.range->end)) continue;
    if (filter.pseudonym && f.session->info.pseudonym != *filter.pseudonym) continue;
    ++count;
  }
  return count;
}

ExerciseProgressMatrix EventStore::exercise_stats(const std::string& activity_id) const {
  std::shared_lock lock(mutex_);
  const auto& activity = activity_checked(activity_id);
  ExerciseProgressMatrix matrix;
  auto feedback = activity.type_ids.find(std::string(kFeedbackType));
  if (feedback == activity.type_ids.end()) return matrix;
  for (const Fact& f : activity.facts) {
    if (f.type_id != feedback->second) continue;
    auto& cell = matrix[{f.session->info.pseudonym.digits(), activity.exercise_names[f.exercise_id]}];
    ++cell.attempts;
    if (f.verdict == Verdict::success) ++cell.successes;
    if (f.verdict == Verdict::failure) ++cell.failures;
    cell.last_attempt_at = std::max(cell.last_attempt_at, f.at);
  }
  return matrix;
}

std::vector<TimelinePoint> EventStore::timeline(const std::string& activity_id, Bucket bucket, TimeRange range) const {
  std::shared_lock lock(mutex_);
  const auto& activity = activity_checked(activity_id);
  std::map<Instant, std::pair<std::size_t, std::unordered_set<const SessionState*>>> buckets;
  for (const Fact& f : activity.facts) {
    if (f.at < range.start || f.at >= range.end) continue;
    auto& b = buckets[bucket_start(f.at, bucket)];
    ++b.first;
    b.second.insert(f.session);
  }
  std::vector<TimelinePoint> points;
  points.reserve(buckets.size());
  for (const auto& [start, b] : buckets) points.push_back({start, b.first, b.second.size()});
  return points;
}

std::vector<StoredEvent> EventStore::events_by_type(const std::string& activity_id, const std::string& type_pattern,
                                                    Page page) const {
  std::shared_lock lock(mutex_);
  const auto& activity = activity_checked(activity_id);
  const auto mask = activity.type_mask(type_pattern);
  std::vector<const Fact*> matching;
  for (const Fact& f : activity.facts) {
    if (mask[f.type_id]) matching.push_back(&f);
  }
  std::sort(matching.begin(), matching.end(), [](const Fact* a, const Fact* b) {
    if (a->at != b->at) return a->at < b->at;
    if (a->session->info.session_id != b->session->info.session_id) {
      return a->session->info.session_id < b->session->info.session_id;
    }
    return a->seq < b->seq;
  });
  std::vector<StoredEvent> out;
  for (std::size_t i = page.offset; i < matching.size() && out.size() < page.limit; ++i) {
    out.push_back(matching[i]->session->events[matching[i]->seq - 1]);
  }
  return out;
}

void EventStore::export_all(const std::string& activity_id, std::ostream& out) const {
  std::shared_lock lock(mutex_);
  activity_checked(activity_id);
  std::vector<const SessionState*> sessions;
  for (const auto& [id, s] : sessions_) {
    if (s->info.activity_id == activity_id) sessions.push_back(s.get());
  }
  std::sort(sessions.begin(), sessions.end(), [](const SessionState* a, const SessionState* b) {
    if (a->info.started_at != b->info.started_at) return a->info.started_at < b->info.started_at;
    return a->info.session_id < b->info.session_id;
  });
  std::size_t total = 0;
  for (const auto* s : sessions) total += s->events.size();

  out << kExportMagic << '\n';
  out << "activity " << activity_id << '\n';
  out << "sessions " << sessions.size() << '\n';
  for (const auto* s : sessions) {
    out << "session " << s->info.session_id.hex() << ' ' << s->info.pseudonym.digits() << ' '
        << format_iso8601(s->info.started_at) << ' ' << (s->info.opt_out ? 1 : 0) << ' ' << s->events.size() << '\n';
  }
  out << "events " << total << '\n';
  for (const auto* s : sessions) {
    for (const auto& e : s->events) {
      std::string redactions;
      for (const auto& r : e.redactions) redactions += (redactions.empty() ? "" : ",") + percent_encode(r);
      const std::string doc = wire::encode(e.envelope);
      out << "event " << e.session_id.hex() << ' ' << e.seq << ' ' << format_iso8601(e.server_timestamp) << ' '
          << (redactions.empty() ? "-" : redactions) << ' ' << doc.size() << '\n'
          << doc << '\n';
    }
  }
  out << "end\n";
}

namespace {

class ExportReader {
 public:
  explicit ExportReader(std::string data) : data_(std::move(data)) {}

  std::uint64_t position() const { return pos_; }

  std::string_view line() {
    const auto nl = data_.find('\n', pos_);
    if (nl == std::string::npos) fail("unexpected end of stream");
    std::string_view l(data_.data() + pos_, nl - pos_);
    line_start_ = pos_;
    pos_ = nl + 1;
    return l;
  }

  std::string_view bytes(std::size_t n) {
    if (n > data_.size() - pos_ || n + 1 > data_.size() - pos_ || data_[pos_ + n] != '\n') {
      fail("truncated event document");
    }
    std::string_view b(data_.data() + pos_, n);
    line_start_ = pos_;
    pos_ += n + 1;
    return b;
  }

  std::vector<std::string_view> fields(std::string_view keyword, std::size_t count) {
    auto parts = split(line(), ' ');
    if (parts.size() != count || parts[0] != keyword) fail("expected '" + std::string(keyword) + "' line");
    return parts;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw StoreError(Code::corrupt_stream, what + " at byte " + std::to_string(line_start_), line_start_);
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
  std::size_t line_start_ = 0;
};

}  // namespace

void EventStore::import(std::istream& in) {
  std::ostringstream buffer;
  buffer << in.rdbuf();
  ExportReader reader(buffer.str());

  if (reader.line() != kExportMagic) reader.fail("not an export stream");
  const std::string activity_id(reader.fields("activity", 2)[1]);
  if (activity_id.empty()) reader.fail("bad activity id");
  const auto session_count = parse_uint<std::size_t>(reader.fields("sessions", 2)[1]);
  if (!session_count) reader.fail("bad session count");

  std::vector<auth::Session> sessions;
  std::vector<std::size_t> expected_events;
  std::unordered_map<SessionId, std::size_t, model::SessionIdHash> index;
  for (std::size_t i = 0; i < *session_count; ++i) {
    const auto f = reader.fields("session", 6);
    auth::Session s;
    const auto id = SessionId::from_hex(f[1]);
    const auto started = parse_iso8601(f[3]);
    const auto n = parse_uint<std::size_t>(f[5]);
    if (!id || !started || !n || (f[4] != "0" && f[4] != "1")) reader.fail("bad session line");
    try {
      s.pseudonym = auth::Pseudonym(std::string(f[2]));
    } catch (const std::invalid_argument&) {
      reader.fail("bad pseudonym");
    }
    s.session_id = *id;
    s.activity_id = activity_id;
    s.started_at = *started;
    s.opt_out = f[4] == "1";
    if (s.opt_out && *n != 0) reader.fail("opt-out session with events");
    if (!index.try_emplace(s.session_id, sessions.size()).second) reader.fail("duplicate session");
    sessions.push_back(s);
    expected_events.push_back(*n);
  }

  const auto event_count = parse_uint<std::size_t>(reader.fields("events", 2)[1]);
  if (!event_count) reader.fail("bad event count");
  std::vector<std::vector<StoredEvent>> events(sessions.size());
  for (std::size_t i = 0; i < *event_count; ++i) {
    const auto f = reader.fields("event", 6);
    const auto id = SessionId::from_hex(f[1]);
    const auto seq = parse_uint<std::uint64_t>(f[2]);
    const auto server = parse_iso8601(f[3]);
    const auto len = parse_uint<std::size_t>(f[5]);
    if (!id || !seq || !server || !len) reader.fail("bad event line");
    auto it = index.find(*id);
    if (it == index.end()) reader.fail("event for undeclared session");
    auto& list = events[it->second];
    if (*seq != list.size() + 1) reader.fail("sequence gap");
    StoredEvent e;
    e.session_id = *id;
    e.seq = *seq;
    e.server_timestamp = *server;
    if (f[4] != "-") {
      for (auto part : split(f[4], ',')) {
        auto name = percent_decode(part);
        if (!name) reader.fail("bad redaction list");
        e.redactions.push_back(std::move(*name));
      }
    }
    const auto doc = reader.bytes(*len);
    try {
      e.envelope = wire::decode(doc);
    } catch (const wire::DecodeError& err) {
      reader.fail(std::string("bad event document: ") + err.what());
    }
    list.push_back(std::move(e));
  }
  if (reader.line() != "end") reader.fail("missing end marker");
  if (!reader.at_end()) reader.fail("trailing data");
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    if (events[i].size() != expected_events[i]) reader.fail("event count does not match the manifest");
  }

  std::unique_lock lock(mutex_);
  auto existing = activities_.find(activity_id);
  if (existing != activities_.end() && !existing->second->sessions.empty()) {
    throw StoreError(Code::conflict, "activity already holds sessions: " + activity_id);
  }
  for (const auto& s : sessions) {
    if (sessions_.contains(s.session_id)) throw StoreError(Code::conflict, "session already present");
  }
  if (existing == activities_.end() && log_) log_->append(RecordType::activity, activity_id);
  activity_locked(activity_id);
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    if (log_) log_->append(RecordType::session, session_payload(sessions[i]));
    insert_session_locked(sessions[i]);
    auto& state = *sessions_.at(sessions[i].session_id);
    for (auto& e : events[i]) {
      const std::uint64_t offset = log_ ? log_->append(RecordType::event, event_payload(e)) : 0;
      insert_event_locked(state, std::move(e));
      state.offsets.push_back(offset);
    }
  }
}

std::unique_ptr<EventStore> import_stream(std::istream& in) {
  auto store = EventStore::in_memory();
  store->import(in);
  return store;
}

}  // namespace lalog::store
