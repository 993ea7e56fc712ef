#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <fstream>
#include <sstream>
#include <thread>

#include "store_oracle.hpp"
#include "temp_dir.hpp"
#include "lalog/wire/codec.hpp"

using namespace lalog;
using namespace lalog::store;
using model::FieldValue;
using testing::RandomFixture;

namespace {

/// Filter over a whole activity.
AggregateFilter whole(const std::string& activity_id) {
  AggregateFilter f;
  f.activity_id = activity_id;
  return f;
}

const Instant kT0 = *parse_iso8601("2012-01-15T10:00:00.000Z");

auth::Session make_session(const std::string& activity, const std::string& pseudonym, Instant started,
                           bool opt_out = false) {
  return {model::SessionId::random(), activity, auth::Pseudonym(pseudonym), started, opt_out};
}

model::ValidatedEvent ev(const std::string& type, std::vector<model::Field> fields, const std::string& exercise = "ex1") {
  model::EventEnvelope e;
  e.event_type = type;
  e.client_timestamp = kT0;
  e.exercise = exercise;
  e.fields = std::move(fields);
  return model::validate(std::move(e), model::builtin_schemas());
}

model::ValidatedEvent action(const std::string& name = "created point P1 in domain 1") {
  return ev("action", {{"action_name", FieldValue::string(name)}});
}

model::ValidatedEvent feedback(const std::string& verdict, const std::string& exercise = "ex1") {
  return ev("feedback", {{"verdict", FieldValue::string(verdict)}, {"message", FieldValue::string("")}}, exercise);
}

std::uint64_t seq_of(const AppendResult& r) { return std::get<Appended>(r).event.seq; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("append assigns gap-free sequence numbers") {
  auto store = EventStore::in_memory();
  store->register_activity("a");
  const auto s = make_session("a", "000000000001", kT0);
  store->add_session(s);
  CHECK(seq_of(store->append(s.session_id, action(), kT0)) == 1);
  CHECK(seq_of(store->append(s.session_id, action(), kT0)) == 2);
  CHECK(seq_of(store->append(s.session_id, action(), kT0 - std::chrono::seconds(5))) == 3);
  const auto events = store->session_events(s.session_id);
  REQUIRE(events.size() == 3);
  // Server timestamps never go backwards within a session.
  CHECK(events[2].server_timestamp == kT0);
}

TEST_CASE("opt-out sessions discard events") {
  auto store = EventStore::in_memory();
  store->register_activity("a");
  const auto s = make_session("a", "000000000001", kT0, true);
  store->add_session(s);
  CHECK(std::holds_alternative<Discarded>(store->append(s.session_id, action(), kT0)));
  CHECK(store->session_events(s.session_id).empty());
  CHECK(store->list_users("a").empty());
  CHECK(store->list_sessions("a", std::nullopt, {}).empty());
  CHECK(store->count_events(whole("a")) == 0);
  CHECK(store->find_session(s.session_id)->opt_out);
}

TEST_CASE("session_events prefix") {
  auto store = EventStore::in_memory();
  store->register_activity("a");
  const auto s = make_session("a", "000000000001", kT0);
  store->add_session(s);
  for (int i = 0; i < 5; ++i) store->append(s.session_id, action(), kT0);
  CHECK(store->session_events(s.session_id, 3).size() == 3);
  CHECK(store->session_events(s.session_id, 3).back().seq == 3);
  CHECK(store->session_events(s.session_id, 0).empty());
  CHECK(store->session_events(s.session_id).size() == 5);
  CHECK(store->session_events(s.session_id, 99).size() == 5);
  CHECK_THROWS_AS(store->session_events(model::SessionId::random()), StoreError);
}

TEST_CASE("unknown ids") {
  auto store = EventStore::in_memory();
  try {
    store->list_users("nope");
    FAIL("no error");
  } catch (const StoreError& e) {
    CHECK(e.code() == StoreError::Code::unknown_activity);
  }
  try {
    store->append(model::SessionId::random(), action(), kT0);
    FAIL("no error");
  } catch (const StoreError& e) {
    CHECK(e.code() == StoreError::Code::unknown_session);
  }
  CHECK_THROWS_AS(store->add_session(make_session("nope", "000000000001", kT0)), StoreError);
}

TEST_CASE("list_users groups by pseudonym") {
  auto store = EventStore::in_memory();
  store->register_activity("a");
  CHECK(store->list_users("a").empty());
  const auto s1 = make_session("a", "000000000001", kT0);
  const auto s2 = make_session("a", "000000000001", kT0 + std::chrono::hours(1));
  store->add_session(s1);
  store->add_session(s2);
  const auto rows = store->list_users("a");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].session_count == 2);
  CHECK(rows[0].last_active == kT0 + std::chrono::hours(1));

  RandomFixture fx(99, "b");
  auto store2 = EventStore::in_memory();
  store2->register_activity("b");
  // 10 users x 3 sessions.
  for (int u = 0; u < 10; ++u) {
    for (int k = 0; k < 3; ++k) {
      auto s = make_session("b", "00000000000" + std::to_string(u), kT0 + std::chrono::minutes(u * 10 + k));
      store2->add_session(s);
      fx.data.sessions.push_back({s, {}});
    }
  }
  const auto users = store2->list_users("b");
  CHECK(users.size() == 10);
  for (const auto& row : users) CHECK(row.session_count == 3);
  CHECK(users == testing::oracle_users(fx.data));
}

TEST_CASE("list_sessions paging") {
  auto store = EventStore::in_memory();
  RandomFixture fx(5, "a");
  fx.populate(*store, 4, 12, 80, 0.2);
  const auto all = store->list_sessions("a", std::nullopt, {0, 1000});
  CHECK(all == testing::oracle_sessions(fx.data, std::nullopt, {0, 1000}));
  const auto first = store->list_sessions("a", std::nullopt, {0, 1});
  REQUIRE(first.size() == 1);
  CHECK(first[0] == all[0]);
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].started_at >= all[i].started_at);
  CHECK(store->list_sessions("a", std::nullopt, {all.size(), 10}).empty());
  const auto p = fx.data.sessions[0].info.pseudonym;
  CHECK(store->list_sessions("a", p, {0, 1000}) == testing::oracle_sessions(fx.data, p, {0, 1000}));
  CHECK(store->list_sessions("a", std::nullopt, {2, 3}) == testing::oracle_sessions(fx.data, std::nullopt, {2, 3}));
}

TEST_CASE("count_events") {
  auto empty = EventStore::in_memory();
  empty->register_activity("a");
  CHECK(empty->count_events(whole("a")) == 0);

  auto store = EventStore::in_memory();
  RandomFixture fx(17, "a");
  fx.populate(*store, 5, 10, 200, 0.0);
  CHECK(store->count_events(whole("a")) == 200);
  for (const auto& type : RandomFixture::kTypes) {
    AggregateFilter f = whole("a");
    f.type_pattern = type;
    CHECK(store->count_events(f) == testing::oracle_count(fx.data, f));
  }
  AggregateFilter unknown_exercise = whole("a");
  unknown_exercise.exercise = "ex99";
  CHECK(store->count_events(unknown_exercise) == 0);
}

TEST_CASE("exercise_stats counts feedback verdicts") {
  auto store = EventStore::in_memory();
  store->register_activity("a");
  const auto s = make_session("a", "000000000001", kT0);
  store->add_session(s);
  store->append(s.session_id, feedback("success"), kT0);
  store->append(s.session_id, feedback("failure"), kT0 + std::chrono::seconds(1));
  store->append(s.session_id, feedback("partial"), kT0 + std::chrono::seconds(2));
  store->append(s.session_id, action(), kT0 + std::chrono::seconds(3));
  const auto m = store->exercise_stats("a");
  REQUIRE(m.size() == 1);
  const auto& cell = m.at({"000000000001", "ex1"});
  CHECK(cell.attempts == 3);
  CHECK(cell.successes == 1);
  CHECK(cell.failures == 1);
  CHECK(cell.last_attempt_at == kT0 + std::chrono::seconds(2));
  CHECK_FALSE(m.contains({"000000000001", "ex2"}));
}

TEST_CASE("timeline") {
  auto store = EventStore::in_memory();
  store->register_activity("a");
  const auto s = make_session("a", "000000000001", kT0);
  store->add_session(s);
  store->append(s.session_id, action(), kT0 + std::chrono::minutes(30));
  const auto points = store->timeline("a", Bucket::hour, {kT0 - std::chrono::hours(5), kT0 + std::chrono::hours(5)});
  REQUIRE(points.size() == 1);
  CHECK(points[0] == TimelinePoint{kT0, 1, 1});
  CHECK(store->timeline("a", Bucket::day, {kT0, kT0}).empty());

  // 2012-01-15 is a Sunday; its week starts Monday 2012-01-09.
  CHECK(bucket_start(kT0, Bucket::week) == *parse_iso8601("2012-01-09T00:00:00.000Z"));
  CHECK(bucket_start(*parse_iso8601("2012-01-09T00:00:00.000Z"), Bucket::week) ==
        *parse_iso8601("2012-01-09T00:00:00.000Z"));
}

TEST_CASE("events_by_type") {
  auto store = EventStore::in_memory();
  store->register_activity("a");
  const auto s = make_session("a", "000000000001", kT0);
  store->add_session(s);
  for (int i = 0; i < 30; ++i) {
    if (i % 3 == 0) {
      store->append(s.session_id,
                    ev("helprequest", {{"question_text", FieldValue::string("q")},
                                       {"learner_email", FieldValue::string("x@y.de")}}),
                    kT0);
    }
    store->append(s.session_id, ev("cominm.rewrite", {{"rule", FieldValue::string("r")}}), kT0);
  }
  store->append(s.session_id,
                ev("helprequest", {{"question_text", FieldValue::string("q")}, {"learner_email", FieldValue::string("x@y.de")}}),
                kT0);
  CHECK(store->events_by_type("a", "helprequest", {0, 100}).size() == 11);
  CHECK(store->events_by_type("a", "cominm.*", {0, 100}).size() == 30);
  CHECK(store->events_by_type("a", "cominm.rewrite", {0, 100}).size() == 30);
  CHECK(store->events_by_type("a", "squiggle.*", {0, 100}).empty());
  CHECK(store->events_by_type("a", "helprequest", {10, 100}).size() == 1);
}

TEST_CASE("aggregates equal the full-scan oracle") {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    auto store = EventStore::in_memory();
    RandomFixture fx(seed, "act");
    fx.populate(*store, fx.uniform(1, 20), fx.uniform(1, 40), fx.uniform(0, 1500));
    for (int q = 0; q < 30; ++q) {
      const auto f = fx.random_filter();
      REQUIRE(store->count_events(f) == testing::oracle_count(fx.data, f));
    }
    CHECK(store->exercise_stats("act") == testing::oracle_exercise_stats(fx.data));
    CHECK(store->list_users("act") == testing::oracle_users(fx.data));
    for (auto b : {Bucket::hour, Bucket::day, Bucket::week}) {
      const auto r = fx.random_range();
      CHECK(store->timeline("act", b, r) == testing::oracle_timeline(fx.data, b, r));
    }
  }
}

TEST_CASE("redact updates the stored event") {
  auto store = EventStore::in_memory();
  store->register_activity("a");
  const auto s = make_session("a", "000000000001", kT0);
  store->add_session(s);
  store->append(s.session_id,
                ev("helprequest", {{"question_text", FieldValue::string("q")}, {"learner_email", FieldValue::string("x@y.de")}}),
                kT0);
  const auto r = store->redact(s.session_id, 1, {"learner_email"});
  CHECK(r.envelope.find("learner_email") == nullptr);
  CHECK(store->find_event(s.session_id, 1)->redactions == std::vector<std::string>{"learner_email"});
  CHECK(store->redact(s.session_id, 1, {"learner_email"}) == r);
}

TEST_CASE("export and import reproduce the store") {
  auto store = EventStore::in_memory();
  RandomFixture fx(77, "act");
  fx.populate(*store, 6, 15, 400);
  const auto& first = fx.data.sessions.front();
  if (!first.info.opt_out && !first.events.empty()) store->redact(first.info.session_id, 1, {"verdict", "x y,z"});

  std::stringstream exported;
  store->export_all("act", exported);
  const std::string bytes = exported.str();

  std::istringstream in(bytes);
  auto copy = import_stream(in);
  std::stringstream again;
  copy->export_all("act", again);
  CHECK(again.str() == bytes);
  for (const auto& s : fx.data.sessions) {
    CHECK(copy->find_session(s.info.session_id) == s.info);
    CHECK(copy->session_events(s.info.session_id) == store->session_events(s.info.session_id));
  }
  CHECK(copy->count_events(whole("act")) == store->count_events(whole("act")));
  CHECK(copy->exercise_stats("act") == store->exercise_stats("act"));

  // Importing the same activity twice conflicts.
  std::istringstream in2(bytes);
  try {
    copy->import(in2);
    FAIL("no conflict");
  } catch (const StoreError& e) {
    CHECK(e.code() == StoreError::Code::conflict);
  }

  for (std::size_t cut : {bytes.size() / 3, bytes.size() - 3, std::size_t{10}}) {
    std::istringstream truncated(bytes.substr(0, cut));
    try {
      (void)import_stream(truncated);
      FAIL("truncated stream accepted at " << cut);
    } catch (const StoreError& e) {
      CHECK(e.code() == StoreError::Code::corrupt_stream);
      CHECK(e.position() <= cut);
    }
  }
}

TEST_CASE("file backend survives reopen") {
  testing::TempDir dir;
  const auto path = dir.path() / "events.log";
  RandomFixture fx(3, "act");
  std::string before;
  {
    auto store = EventStore::open(path);
    fx.populate(*store, 5, 12, 300);
    std::stringstream out;
    store->export_all("act", out);
    before = out.str();
  }
  auto reopened = EventStore::open(path);
  std::stringstream out;
  reopened->export_all("act", out);
  CHECK(out.str() == before);
  CHECK(reopened->list_users("act") == testing::oracle_users(fx.data));

  // Appends continue the sequence after reopen.
  for (const auto& s : fx.data.sessions) {
    if (s.info.opt_out) continue;
    CHECK(seq_of(reopened->append(s.info.session_id, action(), kT0)) == s.events.size() + 1);
    break;
  }
}

TEST_CASE("file backend: redacted bytes leave the log") {
  testing::TempDir dir;
  const auto path = dir.path() / "events.log";
  model::SessionId sid;
  {
    auto store = EventStore::open(path);
    store->register_activity("a");
    const auto s = make_session("a", "000000000001", kT0);
    sid = s.session_id;
    store->add_session(s);
    store->append(sid, action(), kT0);
    store->append(sid,
                  ev("helprequest", {{"question_text", FieldValue::string("why?")},
                                     {"learner_email", FieldValue::string("unique-learner@example.org")}}),
                  kT0);
    store->append(sid, action(), kT0);
    CHECK(slurp(path).find("unique-learner@example.org") != std::string::npos);
    store->redact(sid, 2, {"learner_email"});
    CHECK(slurp(path).find("unique-learner@example.org") == std::string::npos);
  }
  auto reopened = EventStore::open(path);
  const auto events = reopened->session_events(sid);
  REQUIRE(events.size() == 3);
  CHECK(events[1].envelope.find("learner_email") == nullptr);
  CHECK(events[1].envelope.find("question_text")->as_string() == "why?");
  CHECK(events[1].redactions == std::vector<std::string>{"learner_email"});
  CHECK(seq_of(reopened->append(sid, action(), kT0)) == 4);
}

TEST_CASE("file backend: a torn tail is dropped, acknowledged records stay") {
  testing::TempDir dir;
  const auto path = dir.path() / "events.log";
  model::SessionId sid;
  {
    auto store = EventStore::open(path);
    store->register_activity("a");
    const auto s = make_session("a", "000000000001", kT0);
    sid = s.session_id;
    store->add_session(s);
    for (int i = 0; i < 4; ++i) store->append(sid, action(), kT0);
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << std::string("\x40\x00\x00\x00\x03partial", 12);
  }
  auto reopened = EventStore::open(path);
  CHECK(reopened->session_events(sid).size() == 4);
  CHECK(seq_of(reopened->append(sid, action(), kT0)) == 5);
}

TEST_CASE("file backend: killed writer loses no acknowledged event") {
  testing::TempDir dir;
  const auto path = dir.path() / "events.log";
  int fds[2];
  REQUIRE(::pipe(fds) == 0);
  const pid_t child = ::fork();
  REQUIRE(child >= 0);
  if (child == 0) {
    ::close(fds[0]);
    auto store = EventStore::open(path);
    store->register_activity("a");
    const auto s = make_session("a", "000000000001", kT0);
    store->add_session(s);
    if (::write(fds[1], s.session_id.bytes().data(), 16) != 16) ::_exit(2);
    for (int i = 0; i < 1000; ++i) {
      const auto seq = seq_of(store->append(s.session_id, action("a" + std::to_string(i)), kT0));
      if (::write(fds[1], &seq, sizeof seq) != sizeof seq) ::_exit(2);
    }
    ::pause();
    ::_exit(0);
  }
  ::close(fds[1]);
  model::SessionId::Bytes sid_bytes{};
  REQUIRE(::read(fds[0], sid_bytes.data(), 16) == 16);
  std::uint64_t acked = 0;
  std::uint64_t seq = 0;
  while (acked < 300 && ::read(fds[0], &seq, sizeof seq) == sizeof seq) acked = seq;
  ::kill(child, SIGKILL);
  ::waitpid(child, nullptr, 0);
  while (::read(fds[0], &seq, sizeof seq) == sizeof seq) acked = seq;
  ::close(fds[0]);

  auto reopened = EventStore::open(path);
  const auto events = reopened->session_events(model::SessionId(sid_bytes));
  CHECK(events.size() >= acked);
  for (std::size_t i = 0; i < events.size(); ++i) CHECK(events[i].seq == i + 1);
}

TEST_CASE("concurrent appends keep per-session sequences gap-free") {
  auto store = EventStore::in_memory();
  store->register_activity("a");
  std::vector<auth::Session> sessions;
  for (int i = 0; i < 8; ++i) {
    sessions.push_back(make_session("a", "00000000000" + std::to_string(i % 3), kT0));
    store->add_session(sessions.back());
  }
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 200; ++i) store->append(sessions[static_cast<std::size_t>((t + i) % 8)].session_id, action(), kT0);
    });
  }
  for (auto& t : threads) t.join();
  std::size_t total = 0;
  for (const auto& s : sessions) {
    const auto events = store->session_events(s.session_id);
    for (std::size_t i = 0; i < events.size(); ++i) CHECK(events[i].seq == i + 1);
    total += events.size();
  }
  CHECK(total == 1600);
  CHECK(store->count_events(whole("a")) == 1600);
}
