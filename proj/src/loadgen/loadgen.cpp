#include "lalog/loadgen/loadgen.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

#include "lalog/common/crypto.hpp"
#include "lalog/wire/codec.hpp"

namespace lalog::loadgen {

namespace {

using model::FieldValue;

std::string hex_token(std::mt19937_64& rng, int bytes) {
  std::vector<std::uint8_t> b(static_cast<std::size_t>(bytes));
  for (auto& x : b) x = static_cast<std::uint8_t>(rng() & 0xff);
  return crypto::to_hex(b);
}

std::size_t pick(std::mt19937_64& rng, const std::vector<double>& weights) {
  return std::discrete_distribution<std::size_t>(weights.begin(), weights.end())(rng);
}

const std::vector<std::string> kActions = {"created point", "moved point", "drew line", "rewrote term",
                                           "applied rule",  "undo",        "opened hint", "selected domain"};
const std::vector<std::string> kQuestions = {"Is this set closed under union?", "What does the arrow mean here?",
                                             "Why is the second step not allowed?", "How do I pick the domain?"};
const std::vector<std::string> kHelp = {"I do not understand why my rewrite is rejected.",
                                        "The feedback says wrong, but I think my proof is right.",
                                        "How should I start this exercise?",
                                        "Which rule applies to the negated term?"};

model::EventEnvelope make_event(std::mt19937_64& rng, const Options& o, const std::string& type, std::size_t exercise,
                                Instant at, const std::string& email) {
  model::EventEnvelope e;
  e.event_type = type;
  e.client_timestamp = at;
  e.exercise = o.exercises.empty() ? "" : o.exercises[exercise];
  if (type == "action") {
    e.fields = {{"action_name", FieldValue::string(kActions[rng() % kActions.size()] + " " + std::to_string(rng() % 40))}};
  } else if (type == "question") {
    e.fields = {{"question_text", FieldValue::string(kQuestions[rng() % kQuestions.size()])}};
  } else if (type == "image") {
    std::vector<std::uint8_t> bytes(48 + rng() % 160);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng() & 0xff);
    e.fields = {{"image", FieldValue::blob("image/png", std::move(bytes))}};
  } else if (type == "feedback") {
    const double p = o.success_rate.empty() ? 0.5 : o.success_rate[std::min(exercise, o.success_rate.size() - 1)];
    const double roll = std::uniform_real_distribution<double>(0, 1)(rng);
    const char* verdict = roll < p ? "success" : (roll < p + (1 - p) * 0.75 ? "failure" : "partial");
    e.fields = {{"verdict", FieldValue::string(verdict)},
                {"message", FieldValue::string(std::string("automatic assessment: ") + verdict)}};
  } else if (type == "helprequest") {
    e.fields = {{"question_text", FieldValue::string(kHelp[rng() % kHelp.size()])},
                {"learner_email", FieldValue::string(email)}};
  }
  return e;
}

server::ApiRequest post(std::string path) {
  server::ApiRequest r;
  r.method = "POST";
  r.path = std::move(path);
  return r;
}

struct Step {
  Instant at;
  std::size_t session;
  std::size_t index;  // SIZE_MAX = launch
};

void note_error(Report& report, std::string message) {
  ++report.failures;
  if (report.errors.size() < 10) report.errors.push_back(std::move(message));
}

}  // namespace

void check(const Options& o) {
  if (o.users < 0 || o.sessions < 0 || o.events < 0 || o.help_requests < 0) {
    throw std::invalid_argument("counts must be non-negative");
  }
  if (o.users > 0 && o.sessions < o.users) throw std::invalid_argument("every user needs at least one session");
  if (o.users == 0 && o.sessions > 0) throw std::invalid_argument("sessions need users");
  if (o.events > 0 && o.sessions == 0) throw std::invalid_argument("events need sessions");
  if (o.help_requests > o.events) throw std::invalid_argument("help requests are events: --help-requests <= --events");
  if (o.exercises.empty()) throw std::invalid_argument("at least one exercise is required");
  for (double p : o.success_rate) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument("success rates must lie in [0, 1]");
  }
}

std::size_t Plan::event_count() const {
  std::size_t n = 0;
  for (const auto& s : sessions) n += s.events.size();
  return n;
}

Plan make_plan(const Options& o) {
  check(o);
  std::mt19937_64 rng(o.seed);
  Plan plan;
  for (int u = 0; u < o.users; ++u) {
    plan.user_refs.push_back("lms-user:" + hex_token(rng, 6));
    plan.user_emails.push_back("s" + hex_token(rng, 4) + "@students.example.edu");
  }
  const auto term_ms = std::chrono::duration_cast<std::chrono::milliseconds>(o.term_length).count();
  plan.sessions.resize(static_cast<std::size_t>(o.sessions));
  for (std::size_t s = 0; s < plan.sessions.size(); ++s) {
    auto& session = plan.sessions[s];
    session.user = s < static_cast<std::size_t>(o.users) ? s : rng() % static_cast<std::uint64_t>(o.users);
    session.launch_at =
        o.term_start + std::chrono::milliseconds(static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(term_ms)));
  }

  // Spread events over sessions with uneven session lengths.
  std::vector<std::size_t> per_session(plan.sessions.size(), 0);
  if (!plan.sessions.empty()) {
    std::vector<double> weight(plan.sessions.size());
    std::gamma_distribution<double> length(1.2, 1.0);
    for (auto& w : weight) w = length(rng) + 0.05;
    std::discrete_distribution<std::size_t> which(weight.begin(), weight.end());
    for (int i = 0; i < o.events; ++i) ++per_session[which(rng)];
  }

  // Which of the global event slots are help requests.
  std::vector<std::size_t> slots(static_cast<std::size_t>(o.events));
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  std::vector<bool> is_help(slots.size(), false);
  for (int i = 0; i < o.help_requests; ++i) is_help[slots[static_cast<std::size_t>(i)]] = true;

  std::vector<double> exercise_weight;
  for (std::size_t i = 0; i < o.exercises.size(); ++i) exercise_weight.push_back(std::pow(0.72, static_cast<double>(i)));
  const std::vector<std::string> types = {"action", "feedback", "question", "image"};
  const std::vector<double> type_weight = {0.6, 0.22, 0.1, 0.08};

  std::size_t slot = 0;
  for (std::size_t s = 0; s < plan.sessions.size(); ++s) {
    auto& session = plan.sessions[s];
    std::size_t exercise = pick(rng, exercise_weight);
    Instant at = session.launch_at;
    for (std::size_t k = 0; k < per_session[s]; ++k, ++slot) {
      at += std::chrono::milliseconds(5000 + static_cast<std::int64_t>(rng() % 55000));
      if (rng() % 12 == 0) exercise = std::min(exercise + 1, o.exercises.size() - 1);
      const std::string type = is_help[slot] ? "helprequest" : types[pick(rng, type_weight)];
      session.events.push_back({at, make_event(rng, o, type, exercise, at, plan.user_emails[session.user])});
    }
  }
  return plan;
}

std::multimap<std::string, std::string> launch_form(const auth::LaunchRequest& r) {
  return {{"user_ref", r.user_ref},
          {"issued_at", format_iso8601(r.issued_at)},
          {"nonce", r.nonce},
          {"origin", r.origin},
          {"opt_out", r.opt_out ? "true" : "false"},
          {"signature", r.signature}};
}

auth::LaunchRequest signed_launch(const auth::ActivityConfig& cfg, const std::string& user_ref, Instant issued_at,
                                  const std::string& nonce_hex, bool opt_out) {
  if (cfg.host_whitelist.empty()) throw std::invalid_argument("activity " + cfg.activity_id + " has no whitelisted origin");
  auth::LaunchRequest r;
  r.activity_id = cfg.activity_id;
  r.user_ref = user_ref;
  r.issued_at = issued_at;
  r.nonce = nonce_hex;
  r.origin = cfg.host_whitelist.front();
  r.opt_out = opt_out;
  auth::sign(r, cfg.application_key);
  return r;
}

Report run_direct(const Plan& plan, const auth::ActivityConfig& cfg, server::Service& service, SyntheticClock& clock,
                  std::uint64_t seed) {
  const auto started = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Step> steps;
  for (std::size_t s = 0; s < plan.sessions.size(); ++s) {
    steps.push_back({plan.sessions[s].launch_at, s, SIZE_MAX});
    for (std::size_t i = 0; i < plan.sessions[s].events.size(); ++i) steps.push_back({plan.sessions[s].events[i].at, s, i});
  }
  std::stable_sort(steps.begin(), steps.end(), [](const Step& a, const Step& b) { return a.at < b.at; });

  Report report;
  std::vector<std::string> tokens(plan.sessions.size());
  for (const auto& step : steps) {
    clock.set(std::max(clock.now(), step.at));
    const auto& session = plan.sessions[step.session];
    if (step.index == SIZE_MAX) {
      auto req = post("/activities/" + cfg.activity_id + "/sessions");
      req.form = launch_form(signed_launch(cfg, plan.user_refs[session.user], clock.now(), hex_token(rng, 16)));
      const auto res = service.handle(req);
      if (res.status != 201) {
        note_error(report, "launch: " + std::to_string(res.status) + " " + res.body);
        continue;
      }
      tokens[step.session] = nlohmann::json::parse(res.body).at("session_id").get<std::string>();
      ++report.sessions_launched;
      continue;
    }
    if (tokens[step.session].empty()) continue;
    const auto& ev = session.events[step.index];
    auto req = post("/sessions/" + tokens[step.session] + "/events");
    req.headers["content-type"] = "application/xml";
    req.body = wire::encode(ev.envelope);
    const auto res = service.handle(req);
    if (res.status == 201) {
      ++report.events_accepted;
      if (ev.envelope.event_type == "helprequest") ++report.help_requests;
    } else {
      note_error(report, "event: " + std::to_string(res.status) + " " + res.body);
    }
  }
  service.drain_triggers();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

Report run_http(const Plan& plan, const auth::ActivityConfig& cfg, const std::string& base_url, std::uint64_t seed,
                const HttpRunOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  Report report;
  std::mutex report_mutex;
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, std::max<std::size_t>(1, plan.sessions.size())));
  const auto min_gap = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / std::max(options.events_per_second, 0.1)));

  auto worker = [&](std::size_t w) {
    httplib::Client client(base_url);
    client.set_keep_alive(true);
    client.set_tcp_nodelay(true);
    client.set_read_timeout(30, 0);
    std::mt19937_64 rng(seed + 0x51ed2701ULL * (w + 1));
    Report local;

    struct Active {
      std::size_t session;
      std::string token;
      std::size_t next = 0;
      std::chrono::steady_clock::time_point last{};
    };
    std::deque<Active> active;
    for (std::size_t s = w; s < plan.sessions.size(); s += workers) {
      const auto& session = plan.sessions[s];
      const auto launch = signed_launch(cfg, plan.user_refs[session.user],
                                        floor<std::chrono::milliseconds>(std::chrono::system_clock::now()),
                                        hex_token(rng, 16));
      httplib::Params form;
      for (const auto& [k, v] : launch_form(launch)) form.emplace(k, v);
      auto res = client.Post("/activities/" + cfg.activity_id + "/sessions", form);
      if (!res || res->status != 201) {
        note_error(local, "launch: " + (res ? std::to_string(res->status) + " " + res->body : httplib::to_string(res.error())));
        continue;
      }
      ++local.sessions_launched;
      active.push_back({s, nlohmann::json::parse(res->body).at("session_id").get<std::string>()});
    }

    // Round-robin over this worker's sessions keeps each session's rate low.
    while (!active.empty()) {
      auto a = std::move(active.front());
      active.pop_front();
      const auto& session = plan.sessions[a.session];
      if (a.next >= session.events.size()) continue;
      const auto wait = a.last + min_gap - std::chrono::steady_clock::now();
      if (wait.count() > 0) std::this_thread::sleep_for(wait);
      const auto& ev = session.events[a.next];
      const std::string body = wire::encode(ev.envelope);
      bool done = false;
      for (int attempt = 1; attempt <= options.max_attempts && !done; ++attempt) {
        auto res = client.Post("/sessions/" + a.token + "/events", body, "application/xml");
        a.last = std::chrono::steady_clock::now();
        if (res && res->status == 201) {
          ++local.events_accepted;
          if (ev.envelope.event_type == "helprequest") ++local.help_requests;
          done = true;
        } else if (res && res->status == 429) {
          ++local.retries;
          std::this_thread::sleep_for(std::chrono::milliseconds(50 * attempt));
        } else if (!res) {
          ++local.retries;
          std::this_thread::sleep_for(std::chrono::milliseconds(100 * attempt));
        } else {
          note_error(local, "event: " + std::to_string(res->status) + " " + res->body);
          break;
        }
      }
      if (!done && local.errors.empty()) note_error(local, "event: gave up after retries");
      ++a.next;
      if (a.next < session.events.size()) active.push_back(std::move(a));
    }

    std::lock_guard lock(report_mutex);
    report.sessions_launched += local.sessions_launched;
    report.events_accepted += local.events_accepted;
    report.help_requests += local.help_requests;
    report.retries += local.retries;
    report.failures += local.failures;
    for (auto& e : local.errors) {
      if (report.errors.size() < 10) report.errors.push_back(std::move(e));
    }
  };

  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker, w);
  for (auto& t : threads) t.join();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace lalog::loadgen
