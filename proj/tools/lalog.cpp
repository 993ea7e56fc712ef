// Command-line entry point: serve, export, import, loadgen and two helpers for
// setting up a deployment (teacher tokens and signed launches).
#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <random>

#include "lalog/auth/launch.hpp"
#include "lalog/common/crypto.hpp"
#include "lalog/loadgen/loadgen.hpp"
#include "lalog/server/config.hpp"
#include "lalog/server/http.hpp"
#include "lalog/server/service.hpp"

namespace {

using namespace lalog;

server::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

const auth::ActivityConfig& pick_activity(const std::vector<auth::ActivityConfig>& all, const std::string& id) {
  if (id.empty()) {
    if (all.size() == 1) return all.front();
    throw std::runtime_error("several activities configured; pass --activity");
  }
  for (const auto& a : all) {
    if (a.activity_id == id) return a;
  }
  throw std::runtime_error("unknown activity \"" + id + "\"");
}

int serve(const std::string& config_path) {
  const auto cfg = server::load_service_config(config_path);
  auto service = server::Service::from_config(cfg);
  server::HttpServer http(*service, {cfg.listen_host, cfg.listen_port, cfg.http_threads, cfg.max_body_bytes});
  const int port = http.bind();
  spdlog::info("listening on {}:{} ({} activities, base url {})", cfg.listen_host, port, service->activities().size(),
               cfg.base_url);
  g_server = &http;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  http.run();
  g_server = nullptr;
  spdlog::info("stopped; draining trigger queue");
  service->drain_triggers();
  return 0;
}

int export_activity(const std::string& config_path, const std::string& activity, const std::string& out_path) {
  const auto cfg = server::load_service_config(config_path);
  auto store = cfg.data_path.empty() ? store::EventStore::in_memory() : store::EventStore::open(cfg.data_path);
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  store->export_all(activity, out);
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + out_path);
  return 0;
}

int import_activity(const std::string& config_path, const std::string& in_path) {
  const auto cfg = server::load_service_config(config_path);
  if (cfg.data_path.empty()) throw std::runtime_error("data_path is empty; nothing to import into");
  std::filesystem::create_directories(cfg.data_path.parent_path().empty() ? "." : cfg.data_path.parent_path());
  auto store = store::EventStore::open(cfg.data_path);
  std::ifstream in(in_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + in_path);
  store->import(in);
  return 0;
}

struct LoadgenArgs {
  loadgen::Options plan;
  std::string target;
  std::string activity;
  std::string data_path;
  std::size_t workers = 8;
  double rate = 40.0;
};

nlohmann::json report_json(const loadgen::Report& r, const std::string& target) {
  return {{"target", target},
          {"sessions_launched", r.sessions_launched},
          {"events_accepted", r.events_accepted},
          {"help_requests", r.help_requests},
          {"retries", r.retries},
          {"failures", r.failures},
          {"seconds", r.seconds},
          {"errors", r.errors}};
}

int run_loadgen(const std::string& config_path, LoadgenArgs args) {
  auto cfg = server::load_service_config(config_path);
  if (!args.data_path.empty()) cfg.data_path = args.data_path;
  const auto activities = server::load_activity_dir(cfg.config_dir);
  const auto& activity = pick_activity(activities, args.activity);
  if (!activity.exercise_order.empty()) args.plan.exercises = activity.exercise_order;
  const auto plan = loadgen::make_plan(args.plan);

  loadgen::Report report;
  if (args.target == "direct-store") {
    auto parts = server::parts_from_config(cfg);
    loadgen::SyntheticClock clock;
    clock.set(args.plan.term_start);
    parts.clock = clock.source();
    parts.session_ids = std::make_unique<auth::SeededSessionIds>(args.plan.seed);
    parts.mail_retry_delay = std::chrono::milliseconds(0);
    // Generated traffic is replayed far faster than real time.
    parts.events_per_second = 1e9;
    server::Service service(std::move(parts));
    report = loadgen::run_direct(plan, activity, service, clock, args.plan.seed);
  } else {
    report = loadgen::run_http(plan, activity, args.target, args.plan.seed, {args.workers, args.rate});
  }
  std::cout << report_json(report, args.target).dump(2) << "\n";
  return report.failures == 0 ? 0 : 1;
}

int mint_token(const std::string& config_path, const std::string& principal, double hours) {
  const auto cfg = server::load_service_config(config_path);
  auth::IdentityVerifier identity(cfg.identity_secret);
  const auto expiry = now_utc() + std::chrono::milliseconds(static_cast<std::int64_t>(hours * 3600 * 1000));
  std::cout << identity.mint(principal, expiry) << "\n";
  return 0;
}

int sign_launch(const std::string& config_path, const std::string& activity_id, const std::string& user_ref, bool opt_out) {
  const auto cfg = server::load_service_config(config_path);
  const auto activities = server::load_activity_dir(cfg.config_dir);
  const auto& activity = pick_activity(activities, activity_id);
  std::random_device rd;
  std::mt19937_64 rng((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
  std::vector<std::uint8_t> nonce(16);
  for (auto& b : nonce) b = static_cast<std::uint8_t>(rng());
  const auto req = loadgen::signed_launch(activity, user_ref, floor<std::chrono::milliseconds>(now_utc()),
                                          crypto::to_hex(nonce), opt_out);
  nlohmann::json out = {{"url", cfg.base_url + "/activities/" + activity.activity_id + "/sessions"}};
  for (const auto& [k, v] : loadgen::launch_form(req)) out["form"][k] = v;
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lalog: learning activity log service"};
  app.require_subcommand(1);
  std::string config = "config/service.json";
  app.add_option("-c,--config", config, "service configuration (JSON)")->capture_default_str();
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service");

  std::string activity, out_path, in_path;
  auto* export_cmd = app.add_subcommand("export", "write one activity's sessions and events to a file");
  export_cmd->add_option("--activity", activity, "activity id")->required();
  export_cmd->add_option("--out", out_path, "output file")->required();

  auto* import_cmd = app.add_subcommand("import", "load an export file into the configured store");
  import_cmd->add_option("--in", in_path, "export file")->required()->check(CLI::ExistingFile);

  LoadgenArgs lg;
  std::uint64_t seed = 1;
  auto* loadgen_cmd = app.add_subcommand("loadgen", "generate synthetic sessions and events");
  loadgen_cmd->add_option("--users", lg.plan.users)->capture_default_str()->check(CLI::NonNegativeNumber);
  loadgen_cmd->add_option("--sessions", lg.plan.sessions)->capture_default_str()->check(CLI::NonNegativeNumber);
  loadgen_cmd->add_option("--events", lg.plan.events)->capture_default_str()->check(CLI::NonNegativeNumber);
  loadgen_cmd->add_option("--help-requests", lg.plan.help_requests)->capture_default_str()->check(CLI::NonNegativeNumber);
  loadgen_cmd->add_option("--seed", seed)->capture_default_str();
  loadgen_cmd->add_option("--success-rate", lg.plan.success_rate, "per-exercise probability of a success verdict")
      ->capture_default_str();
  loadgen_cmd->add_option("--target", lg.target, "base URL of a running server, or direct-store")->required();
  loadgen_cmd->add_option("--activity", lg.activity, "activity id (default: the only configured one)");
  loadgen_cmd->add_option("--data", lg.data_path, "direct-store: append-log file instead of the configured one");
  loadgen_cmd->add_option("--workers", lg.workers, "HTTP target: concurrent clients")->capture_default_str();
  loadgen_cmd->add_option("--rate", lg.rate, "HTTP target: events per second per session")->capture_default_str();

  std::string principal;
  double hours = 12;
  auto* token_cmd = app.add_subcommand("mint-token", "issue a teacher bearer token");
  token_cmd->add_option("--principal", principal, "teacher email")->required();
  token_cmd->add_option("--hours", hours, "validity")->capture_default_str();

  std::string user_ref;
  bool opt_out = false;
  auto* sign_cmd = app.add_subcommand("sign-launch", "print a signed launch request, as an LMS would send it");
  sign_cmd->add_option("--activity", activity, "activity id");
  sign_cmd->add_option("--user-ref", user_ref, "LMS user reference")->required();
  sign_cmd->add_flag("--opt-out", opt_out);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  lg.plan.seed = seed;

  try {
    if (*serve_cmd) return serve(config);
    if (*export_cmd) return export_activity(config, activity, out_path);
    if (*import_cmd) return import_activity(config, in_path);
    if (*loadgen_cmd) return run_loadgen(config, lg);
    if (*token_cmd) return mint_token(config, principal, hours);
    if (*sign_cmd) return sign_launch(config, activity, user_ref, opt_out);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
