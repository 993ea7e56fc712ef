#pragma once

// Full-scan reference implementations of the store's aggregate queries, plus
// a random fixture builder that records what it appended. The oracle only
// looks at its own copy of the data, never at store internals.

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "lalog/model/validate.hpp"
#include "lalog/store/event_store.hpp"

namespace lalog::testing {

struct OracleSession {
  auth::Session info;
  std::vector<model::StoredEvent> events;
};

struct OracleData {
  std::string activity_id;
  std::vector<OracleSession> sessions;  // opt-out sessions included

  std::vector<const OracleSession*> visible() const {
    std::vector<const OracleSession*> out;
    for (const auto& s : sessions) {
      if (!s.info.opt_out) out.push_back(&s);
    }
    return out;
  }
};

inline std::size_t oracle_count(const OracleData& d, const store::AggregateFilter& f) {
  std::size_t n = 0;
  for (const auto* s : d.visible()) {
    if (f.pseudonym && s->info.pseudonym != *f.pseudonym) continue;
    for (const auto& e : s->events) {
      if (f.type_pattern && !model::match_type(e.envelope.event_type, *f.type_pattern)) continue;
      if (f.exercise && e.envelope.exercise != *f.exercise) continue;
      if (f.range && (e.server_timestamp < f.range->start || !(e.server_timestamp < f.range->end))) continue;
      ++n;
    }
  }
  return n;
}

inline store::ExerciseProgressMatrix oracle_exercise_stats(const OracleData& d) {
  store::ExerciseProgressMatrix m;
  for (const auto* s : d.visible()) {
    for (const auto& e : s->events) {
      if (e.envelope.event_type != "feedback") continue;
      auto& cell = m[{s->info.pseudonym.digits(), e.envelope.exercise}];
      cell.attempts += 1;
      const auto* v = e.envelope.find("verdict");
      const std::string verdict = v != nullptr ? v->as_string() : "";
      if (verdict == "success") cell.successes += 1;
      if (verdict == "failure") cell.failures += 1;
      if (cell.last_attempt_at < e.server_timestamp) cell.last_attempt_at = e.server_timestamp;
    }
  }
  return m;
}

inline Instant oracle_bucket(Instant t, store::Bucket b) {
  // Count whole units since the epoch; weeks are aligned to Monday 1970-01-05.
  const std::int64_t ms = to_unix_millis(t);
  auto floor_div = [](std::int64_t a, std::int64_t b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); };
  switch (b) {
    case store::Bucket::hour: return from_unix_millis(floor_div(ms, 3600000) * 3600000);
    case store::Bucket::day: return from_unix_millis(floor_div(ms, 86400000) * 86400000);
    case store::Bucket::week: {
      const std::int64_t monday = 4 * 86400000LL;
      const std::int64_t week = 7 * 86400000LL;
      return from_unix_millis(floor_div(ms - monday, week) * week + monday);
    }
  }
  return t;
}

inline std::vector<store::TimelinePoint> oracle_timeline(const OracleData& d, store::Bucket b, store::TimeRange r) {
  std::map<Instant, std::pair<std::size_t, std::set<std::string>>> buckets;
  for (const auto* s : d.visible()) {
    for (const auto& e : s->events) {
      if (e.server_timestamp < r.start || !(e.server_timestamp < r.end)) continue;
      auto& slot = buckets[oracle_bucket(e.server_timestamp, b)];
      slot.first += 1;
      slot.second.insert(s->info.session_id.hex());
    }
  }
  std::vector<store::TimelinePoint> out;
  for (const auto& [start, slot] : buckets) out.push_back({start, slot.first, slot.second.size()});
  return out;
}

inline std::vector<store::UserRow> oracle_users(const OracleData& d) {
  std::map<std::string, store::UserRow> rows;
  for (const auto* s : d.visible()) {
    auto& row = rows[s->info.pseudonym.digits()];
    row.pseudonym = s->info.pseudonym;
    row.session_count += 1;
    Instant last = s->info.started_at;
    for (const auto& e : s->events) last = std::max(last, e.server_timestamp);
    row.last_active = std::max(row.last_active, last);
  }
  std::vector<store::UserRow> out;
  for (auto& [k, row] : rows) out.push_back(row);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.last_active != b.last_active ? a.last_active > b.last_active : a.pseudonym < b.pseudonym;
  });
  return out;
}

inline std::vector<store::SessionRow> oracle_sessions(const OracleData& d, const std::optional<auth::Pseudonym>& p,
                                                      store::Page page) {
  std::vector<store::SessionRow> all;
  for (const auto* s : d.visible()) {
    if (p && s->info.pseudonym != *p) continue;
    all.push_back({s->info.session_id, s->info.pseudonym, s->info.started_at, s->events.size()});
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.started_at != b.started_at ? a.started_at > b.started_at : a.session_id < b.session_id;
  });
  std::vector<store::SessionRow> out;
  for (std::size_t i = page.offset; i < all.size() && out.size() < page.limit; ++i) out.push_back(all[i]);
  return out;
}

inline std::size_t oracle_events_by_type(const OracleData& d, const std::string& pattern) {
  std::size_t n = 0;
  for (const auto* s : d.visible()) {
    for (const auto& e : s->events) n += model::match_type(e.envelope.event_type, pattern) ? 1 : 0;
  }
  return n;
}

/// Appends random sessions and events to a store and mirrors them in an OracleData.
class RandomFixture {
 public:
  static inline const std::vector<std::string> kTypes = {"action",        "image",         "question", "feedback",
                                                         "helprequest",   "squiggle.link", "cominm.rewrite",
                                                         "cominm.undo"};
  static inline const std::vector<std::string> kExercises = {"ex1", "ex2", "ex3", "ex4", "ex5", ""};

  RandomFixture(std::uint64_t seed, std::string activity_id) : rng_(seed) { data.activity_id = std::move(activity_id); }

  OracleData data;

  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  model::EventEnvelope random_envelope(Instant at) {
    model::EventEnvelope e;
    e.event_type = kTypes[static_cast<std::size_t>(uniform(0, static_cast<int>(kTypes.size()) - 1))];
    e.client_timestamp = at;
    e.exercise = kExercises[static_cast<std::size_t>(uniform(0, static_cast<int>(kExercises.size()) - 1))];
    using model::FieldValue;
    if (e.event_type == "action") e.fields = {{"action_name", FieldValue::string("step " + std::to_string(uniform(0, 99)))}};
    if (e.event_type == "image") e.fields = {{"image", FieldValue::blob("image/png", {1, 2, 3})}};
    if (e.event_type == "question") e.fields = {{"question_text", FieldValue::string("what is x?")}};
    if (e.event_type == "feedback") {
      static const char* verdicts[] = {"success", "failure", "partial"};
      e.fields = {{"verdict", FieldValue::string(verdicts[uniform(0, 2)])}, {"message", FieldValue::string("ok")}};
    }
    if (e.event_type == "helprequest") {
      e.fields = {{"question_text", FieldValue::string("help")},
                  {"learner_email", FieldValue::string("l" + std::to_string(uniform(0, 999)) + "@example.org")}};
    }
    if (e.event_type.starts_with("squiggle") || e.event_type.starts_with("cominm")) {
      e.fields = {{"from", FieldValue::string("P1")}, {"to", FieldValue::number(uniform(0, 9))}};
    }
    return e;
  }

  /// `users` distinct pseudonyms, `sessions` sessions, about `events` events in total.
  void populate(store::EventStore& store, int users, int sessions, int events, double opt_out_rate = 0.1) {
    store.register_activity(data.activity_id);
    std::vector<auth::Pseudonym> pseudonyms;
    for (int u = 0; u < users; ++u) {
      char digits[13];
      std::snprintf(digits, sizeof digits, "%012d", uniform(0, 999999999));
      pseudonyms.emplace_back(std::string(digits));
    }
    const Instant base = *parse_iso8601("2011-10-17T08:00:00.000Z");
    auth::SeededSessionIds ids(rng_());
    for (int s = 0; s < sessions; ++s) {
      auth::Session info;
      info.session_id = ids.next();
      info.activity_id = data.activity_id;
      info.pseudonym = pseudonyms[static_cast<std::size_t>(uniform(0, users - 1))];
      info.started_at = base + std::chrono::minutes(uniform(0, 60 * 24 * 60));
      info.opt_out = std::bernoulli_distribution(opt_out_rate)(rng_);
      store.add_session(info);
      data.sessions.push_back({info, {}});
    }
    if (sessions == 0) return;
    for (int i = 0; i < events; ++i) {
      auto& s = data.sessions[static_cast<std::size_t>(uniform(0, sessions - 1))];
      Instant at = s.events.empty() ? s.info.started_at : s.events.back().server_timestamp;
      at += std::chrono::seconds(uniform(0, 4000));
      auto validated = model::validate(random_envelope(at), model::builtin_schemas());
      auto result = store.append(s.info.session_id, std::move(validated), at);
      if (auto* a = std::get_if<store::Appended>(&result)) s.events.push_back(a->event);
    }
  }

  store::AggregateFilter random_filter() {
    store::AggregateFilter f;
    f.activity_id = data.activity_id;
    if (uniform(0, 2) == 0 && !data.sessions.empty()) {
      f.pseudonym = data.sessions[static_cast<std::size_t>(uniform(0, static_cast<int>(data.sessions.size()) - 1))].info.pseudonym;
    }
    if (uniform(0, 1) == 0) {
      static const std::vector<std::string> patterns = {"action", "feedback", "helprequest", "cominm.*", "squiggle.*",
                                                        "nothing", "image"};
      f.type_pattern = patterns[static_cast<std::size_t>(uniform(0, static_cast<int>(patterns.size()) - 1))];
    }
    if (uniform(0, 2) == 0) f.exercise = kExercises[static_cast<std::size_t>(uniform(0, static_cast<int>(kExercises.size()) - 1))];
    if (uniform(0, 2) == 0) f.range = random_range();
    return f;
  }

  store::TimeRange random_range() {
    const Instant base = *parse_iso8601("2011-10-10T00:00:00.000Z");
    const Instant a = base + std::chrono::hours(uniform(0, 24 * 80));
    return {a, a + std::chrono::hours(uniform(0, 24 * 40))};
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace lalog::testing
