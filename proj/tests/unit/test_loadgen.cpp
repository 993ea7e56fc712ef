#include <doctest.h>

#include <set>
#include <sstream>

#include "service_harness.hpp"

using namespace lalog;
using namespace lalog::testing;

namespace {

loadgen::Options small(std::uint64_t seed) {
  loadgen::Options o;
  o.users = 12;
  o.sessions = 40;
  o.events = 900;
  o.help_requests = 3;
  o.seed = seed;
  o.exercises = {"e1", "e2", "e3"};
  return o;
}

struct DirectRun {
  TempDir dir;
  auth::ActivityConfig cfg = harness_activity("course", "t@example.edu", 0x42);
  loadgen::SyntheticClock clock;
  std::unique_ptr<server::Service> service;
  loadgen::Report report;

  explicit DirectRun(const loadgen::Options& o) {
    clock.set(o.term_start);
    server::ServiceParts parts;
    parts.activities = {cfg};
    parts.store = store::EventStore::open(dir.path() / "events.log");
    parts.mail = std::make_unique<trigger::OutboxGateway>(dir.path() / "outbox");
    parts.identity_secret = std::vector<std::uint8_t>(16, 9);
    parts.events_per_second = 1e9;
    parts.mail_retry_delay = std::chrono::milliseconds(0);
    parts.session_ids = std::make_unique<auth::SeededSessionIds>(o.seed);
    parts.clock = clock.source();
    service = std::make_unique<server::Service>(std::move(parts));
    report = loadgen::run_direct(loadgen::make_plan(o), cfg, *service, clock, o.seed);
    service->drain_triggers();
  }

  std::string exported() {
    std::ostringstream out;
    service->store().export_all(cfg.activity_id, out);
    return out.str();
  }
};

}  // namespace

TEST_CASE("plan hits the requested totals exactly") {
  for (std::uint64_t seed : {1, 2, 3, 99}) {
    const auto o = small(seed);
    const auto plan = loadgen::make_plan(o);
    CHECK(plan.user_refs.size() == 12);
    CHECK(plan.sessions.size() == 40);
    CHECK(plan.event_count() == 900);
    std::size_t helps = 0;
    std::set<std::size_t> users_with_sessions;
    for (const auto& s : plan.sessions) {
      users_with_sessions.insert(s.user);
      Instant prev = s.launch_at;
      for (const auto& e : s.events) {
        helps += e.envelope.event_type == "helprequest";
        CHECK(e.at >= prev);
        prev = e.at;
        if (!e.envelope.exercise.empty()) {
          CHECK(std::find(o.exercises.begin(), o.exercises.end(), e.envelope.exercise) != o.exercises.end());
        }
      }
    }
    CHECK(helps == 3);
    CHECK(users_with_sessions.size() == 12);
  }
}

TEST_CASE("default options give a full term") {
  const auto plan = loadgen::make_plan({});
  CHECK(plan.user_refs.size() == 156);
  CHECK(plan.sessions.size() == 965);
  CHECK(plan.event_count() == 24655);
}

TEST_CASE("plan is a function of the options") {
  const auto a = loadgen::make_plan(small(5));
  const auto b = loadgen::make_plan(small(5));
  const auto c = loadgen::make_plan(small(6));
  REQUIRE(a.sessions.size() == b.sessions.size());
  for (std::size_t i = 0; i < a.sessions.size(); ++i) {
    CHECK(a.sessions[i].launch_at == b.sessions[i].launch_at);
    REQUIRE(a.sessions[i].events.size() == b.sessions[i].events.size());
    for (std::size_t j = 0; j < a.sessions[i].events.size(); ++j) {
      CHECK(a.sessions[i].events[j].envelope == b.sessions[i].events[j].envelope);
    }
  }
  CHECK(a.user_refs == b.user_refs);
  CHECK(a.user_refs != c.user_refs);
}

TEST_CASE("zero events still launches every session") {
  auto o = small(3);
  o.events = 0;
  o.help_requests = 0;
  const auto plan = loadgen::make_plan(o);
  CHECK(plan.sessions.size() == 40);
  CHECK(plan.event_count() == 0);
  DirectRun run(o);
  CHECK(run.report.sessions_launched == 40);
  CHECK(run.report.events_accepted == 0);
  CHECK(run.report.failures == 0);
}

TEST_CASE("impossible options are rejected") {
  auto o = small(1);
  o.sessions = 5;  // fewer sessions than users
  CHECK_THROWS_AS(loadgen::check(o), std::invalid_argument);
  o = small(1);
  o.help_requests = 901;
  CHECK_THROWS_AS(loadgen::check(o), std::invalid_argument);
  o = small(1);
  o.users = 0;
  CHECK_THROWS_AS(loadgen::check(o), std::invalid_argument);
  o = small(1);
  o.exercises.clear();
  CHECK_THROWS_AS(loadgen::check(o), std::invalid_argument);
  CHECK_NOTHROW(loadgen::check(small(1)));
}

TEST_CASE("direct runs with the same seed export identical bytes") {
  DirectRun a(small(7));
  DirectRun b(small(7));
  DirectRun c(small(8));
  CHECK(a.report.failures == 0);
  CHECK(a.report.events_accepted == 900);
  CHECK(a.report.help_requests == 3);
  const auto ea = a.exported();
  CHECK(ea == b.exported());
  CHECK(ea != c.exported());

  // Every help request reached the outbox; no learner address stays in the log.
  std::size_t mails = 0;
  for ([[maybe_unused]] const auto& f : std::filesystem::directory_iterator(a.dir.path() / "outbox")) ++mails;
  CHECK(mails == 3);
  const auto plan = loadgen::make_plan(small(7));
  const auto log = ServiceHarness::slurp(a.dir.path() / "events.log");
  for (const auto& email : plan.user_emails) CHECK(log.find(email) == std::string::npos);
  for (const auto& ref : plan.user_refs) CHECK(ea.find(ref) == std::string::npos);
}
