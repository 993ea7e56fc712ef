#include "lalog/server/service.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "lalog/analytics/views.hpp"
#include "lalog/model/validate.hpp"
#include "lalog/wire/codec.hpp"

namespace lalog::server {

using nlohmann::json;

namespace {

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    const auto j = path.find('/', i);
    const auto end = j == std::string_view::npos ? path.size() : j;
    if (end > i) out.emplace_back(path.substr(i, end - i));
    i = end;
  }
  return out;
}

template <typename T>
std::optional<T> parse_uint(const std::string& s) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

int launch_status(auth::LaunchError::Code code) {
  using C = auth::LaunchError::Code;
  switch (code) {
    case C::unknown_activity: return 404;
    case C::origin_not_whitelisted: return 403;
    case C::malformed_request: return 400;
    case C::bad_signature:
    case C::stale_timestamp:
    case C::replayed_nonce: return 401;
  }
  return 400;
}

std::string content_type_for(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript; charset=utf-8";
  if (ext == ".css") return "text/css; charset=utf-8";
  if (ext == ".json" || ext == ".map") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".woff2") return "font/woff2";
  if (ext == ".txt") return "text/plain; charset=utf-8";
  return "application/octet-stream";
}

bool safe_header_value(std::string_view v) {
  return !v.empty() && std::all_of(v.begin(), v.end(), [](char c) { return c >= 0x20 && c < 0x7f; });
}

struct BadRequest {
  std::string detail;
};

store::Page page_from(const ApiRequest& r) {
  store::Page page;
  if (auto v = r.query_param("offset")) {
    auto n = parse_uint<std::size_t>(*v);
    if (!n) throw BadRequest{"offset must be a non-negative integer"};
    page.offset = *n;
  }
  if (auto v = r.query_param("limit")) {
    auto n = parse_uint<std::size_t>(*v);
    if (!n || *n == 0 || *n > 1000) throw BadRequest{"limit must be between 1 and 1000"};
    page.limit = *n;
  }
  return page;
}

Instant instant_param(const ApiRequest& r, const std::string& key) {
  const auto v = r.query_param(key);
  const auto t = v ? parse_iso8601(*v) : std::nullopt;
  if (!t) throw BadRequest{key + " must be an ISO-8601 UTC timestamp"};
  return *t;
}

bool wants_html(const ApiRequest& r) {
  if (r.header("authorization") || r.query_param("token")) return false;
  const auto accept = r.header("accept");
  return accept && accept->find("text/html") != std::string::npos;
}

}  // namespace

std::optional<std::string> ApiRequest::query_param(const std::string& key) const {
  const auto it = query.find(key);
  return it == query.end() ? std::nullopt : std::optional(it->second);
}

std::optional<std::string> ApiRequest::form_field(const std::string& key) const {
  const auto it = form.find(key);
  return it == form.end() ? std::nullopt : std::optional(it->second);
}

std::optional<std::string> ApiRequest::header(const std::string& lower_name) const {
  const auto it = headers.find(lower_name);
  return it == headers.end() ? std::nullopt : std::optional(it->second);
}

bool RateLimiter::allow(const model::SessionId& session, Instant now) {
  std::lock_guard lock(mutex_);
  auto [it, inserted] = buckets_.try_emplace(session, Bucket{rate_, now});
  auto& b = it->second;
  if (!inserted && b.last < now) {
    const double elapsed = std::chrono::duration<double>(now - b.last).count();
    b.tokens = std::min(rate_, b.tokens + elapsed * rate_);
    b.last = now;
  }
  if (b.tokens < 1.0) return false;
  b.tokens -= 1.0;
  return true;
}

ApiResponse json_response(int status, const json& body) {
  ApiResponse r;
  r.status = status;
  r.body = body.dump();
  r.headers.emplace_back("Cache-Control", "no-store");
  return r;
}

ApiResponse error_response(int status, std::string_view code, std::string_view detail) {
  json body = {{"error", code}};
  if (!detail.empty()) body["detail"] = detail;
  auto r = json_response(status, body);
  if (status == 401) r.headers.emplace_back("WWW-Authenticate", "Bearer");
  return r;
}

Service::Service(ServiceParts parts)
    : activities_(std::move(parts.activities)),
      store_(std::move(parts.store)),
      mail_(std::move(parts.mail)),
      identity_(std::move(parts.identity_secret)),
      base_url_(std::move(parts.base_url)),
      static_dir_(std::move(parts.static_dir)),
      max_body_bytes_(parts.max_body_bytes),
      clock_(std::move(parts.clock)),
      limiter_(parts.events_per_second),
      session_ids_(std::move(parts.session_ids)),
      renderers_(analytics::RendererRegistry::builtin()) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
  if (!session_ids_) session_ids_ = std::make_unique<auth::RandomSessionIds>();
  if (!store_) store_ = store::EventStore::in_memory();
  if (!mail_) throw std::invalid_argument("a mail gateway is required");
  for (const auto& cfg : activities_) {
    if (!by_id_.emplace(cfg.activity_id, &cfg).second) {
      throw std::invalid_argument("duplicate activity " + cfg.activity_id);
    }
    store_->register_activity(cfg.activity_id);
  }
  trigger::DispatchOptions options{base_url_, parts.dead_letter_dir, parts.mail_retry_delay, clock_};
  triggers_ = std::make_unique<trigger::TriggerEngine>(
      *store_, *mail_, [this](const std::string& id) { return activity(id); }, options, parts.trigger_workers);
  store_->set_append_listener(
      [this](const model::StoredEvent& e, const std::string& activity_id) { triggers_->submit(e, activity_id); });

  // A crash between append and dispatch leaves addresses behind; hand them to the engine again.
  std::size_t pending = 0;
  for (const auto& cfg : activities_) {
    std::vector<std::string> patterns = {"helprequest"};
    for (const auto& b : cfg.trigger_bindings) patterns.push_back(b.event_type_pattern);
    std::sort(patterns.begin(), patterns.end());
    patterns.erase(std::unique(patterns.begin(), patterns.end()), patterns.end());
    std::set<std::pair<model::SessionId, std::uint64_t>> seen;
    for (const auto& pattern : patterns) {
      for (const auto& e : store_->events_by_type(cfg.activity_id, pattern, {0, SIZE_MAX})) {
        if (e.envelope.find("learner_email") == nullptr || !seen.insert({e.session_id, e.seq}).second) continue;
        triggers_->submit(e, cfg.activity_id);
        ++pending;
      }
    }
  }
  if (pending > 0) spdlog::warn("re-dispatching {} stored events that still carry a learner address", pending);
}

ServiceParts parts_from_config(const ServiceConfig& config) {
  ServiceParts parts;
  parts.activities = load_activity_dir(config.config_dir);
  if (parts.activities.empty()) {
    throw ConfigError(config.config_dir.string(), 0, "no activity configuration (*.xml) found");
  }
  if (config.data_path.empty()) {
    parts.store = store::EventStore::in_memory();
  } else {
    if (config.data_path.has_parent_path()) std::filesystem::create_directories(config.data_path.parent_path());
    parts.store = store::EventStore::open(config.data_path);
  }
  if (config.mail.mode == MailSettings::Mode::smtp) {
    parts.mail = std::make_unique<trigger::SmtpGateway>(config.mail.smtp);
  } else {
    parts.mail = std::make_unique<trigger::OutboxGateway>(config.mail.outbox_dir, config.mail.smtp.from);
  }
  parts.identity_secret = config.identity_secret;
  parts.base_url = config.base_url;
  parts.static_dir = config.static_dir;
  parts.dead_letter_dir = config.dead_letter_dir;
  parts.max_body_bytes = config.max_body_bytes;
  parts.events_per_second = config.events_per_second;
  parts.trigger_workers = config.trigger_workers;
  return parts;
}

std::unique_ptr<Service> Service::from_config(const ServiceConfig& config) {
  return std::make_unique<Service>(parts_from_config(config));
}

Service::~Service() {
  triggers_->drain();
  store_->set_append_listener(nullptr);
  triggers_.reset();
}

const auth::ActivityConfig* Service::activity(const std::string& activity_id) const {
  const auto it = by_id_.find(activity_id);
  return it == by_id_.end() ? nullptr : it->second;
}

void Service::drain_triggers() { triggers_->drain(); }

std::vector<trigger::TriggerOutcome> Service::trigger_outcomes() const { return triggers_->outcomes(); }

ApiResponse Service::handle(const ApiRequest& request) {
  const auto seg = split_path(request.path);
  const bool get = request.method == "GET" || request.method == "HEAD";
  const bool post = request.method == "POST";
  try {
    if (seg.size() == 3 && seg[0] == "activities" && seg[2] == "sessions" && post) return launch(seg[1], request);
    if (seg.size() == 3 && seg[0] == "sessions" && seg[2] == "events") {
      if (!post) return error_response(405, "method_not_allowed");
      return ingest(seg[1], request);
    }
    if (!seg.empty() && seg[0] == "activities") {
      if (!get) return error_response(405, "method_not_allowed");
      if (seg.size() == 1) return list_activities(request);
      return read(seg, request);
    }
    if (!seg.empty() && seg[0] == "mylog") {
      if (!get) return error_response(405, "method_not_allowed");
      return mylog(seg, request);
    }
    if (seg.size() == 1 && seg[0] == "healthz" && get) {
      ApiResponse r;
      r.content_type = "text/plain";
      r.body = "ok\n";
      return r;
    }
    if (get) {
      if (auto r = static_file(request, false)) return *r;
    }
    return error_response(404, "not_found");
  } catch (const BadRequest& e) {
    return error_response(400, "bad_request", e.detail);
  } catch (const store::StoreError& e) {
    switch (e.code()) {
      case store::StoreError::Code::unknown_session: return error_response(404, "unknown_session");
      case store::StoreError::Code::unknown_activity: return error_response(404, "unknown_activity");
      default:
        spdlog::error("store failure: {}", e.what());
        return error_response(500, "storage_failure");
    }
  }
}

ApiResponse Service::launch(const std::string& activity_id, const ApiRequest& request) {
  const auto* cfg = activity(activity_id);
  if (cfg == nullptr) return error_response(404, "unknown_activity");
  const auto malformed = [](std::string_view detail) { return error_response(400, "malformed_request", detail); };

  auth::LaunchRequest req;
  req.activity_id = activity_id;
  const auto user_ref = request.form_field("user_ref");
  const auto issued = request.form_field("issued_at");
  const auto nonce = request.form_field("nonce");
  const auto origin = request.form_field("origin");
  const auto signature = request.form_field("signature");
  if (!user_ref || !issued || !nonce || !origin || !signature) {
    return malformed("user_ref, issued_at, nonce, origin and signature are required");
  }
  const auto issued_at = parse_iso8601(*issued);
  if (!issued_at) return malformed("issued_at must be an ISO-8601 UTC timestamp");
  const auto opt_out = request.form_field("opt_out").value_or("false");
  if (opt_out != "true" && opt_out != "false") return malformed("opt_out must be true or false");
  req.user_ref = *user_ref;
  req.issued_at = *issued_at;
  req.nonce = *nonce;
  req.origin = *origin;
  req.opt_out = opt_out == "true";
  req.signature = *signature;

  // A browser-supplied Origin header must agree with the signed one.
  if (const auto header = request.header("origin"); header && *header != req.origin) {
    return error_response(403, "origin_not_whitelisted");
  }
  const Instant now = clock_();
  try {
    auto verified = auth::verify_launch(req, *cfg, now, nonces_);
    auth::Session session;
    {
      std::lock_guard lock(ids_mutex_);
      session = auth::create_session(std::move(verified), *cfg, now, *session_ids_);
    }
    store_->add_session(session);
    const std::string token = session.session_id.hex();
    return json_response(201, {{"session_id", token},
                               {"pseudonym", session.pseudonym.digits()},
                               {"opt_out", session.opt_out},
                               {"mylog_url", base_url_ + "/mylog/" + token}});
  } catch (const auth::LaunchError& e) {
    return error_response(launch_status(e.code()), auth::to_string(e.code()));
  }
}

ApiResponse Service::ingest(const std::string& session_hex, const ApiRequest& request) {
  const auto sid = model::SessionId::from_hex(session_hex);
  if (!sid) return error_response(404, "unknown_session");
  const auto session = store_->find_session(*sid);
  if (!session) return error_response(404, "unknown_session");
  if (activity(session->activity_id) == nullptr) return error_response(404, "unknown_activity");
  if (request.body.size() > max_body_bytes_) return error_response(413, "oversize", "request body too large");
  const Instant now = clock_();
  if (!limiter_.allow(*sid, now)) {
    auto r = error_response(429, "rate_limited");
    r.headers.emplace_back("Retry-After", "1");
    return r;
  }
  // Opted-out sessions are not even parsed.
  if (session->opt_out) return ApiResponse{204, "application/json", "", {}};

  model::EventEnvelope envelope;
  try {
    envelope = wire::decode(request.body);
  } catch (const wire::DecodeError& e) {
    return error_response(400, wire::to_string(e.code()), e.detail());
  }
  std::optional<model::ValidatedEvent> validated;
  try {
    validated.emplace(model::validate(std::move(envelope), model::builtin_schemas()));
  } catch (const model::ValidationError& e) {
    const int status = e.code() == model::ValidationError::Code::oversize ? 413 : 400;
    return error_response(status, model::to_string(e.code()), e.field());
  }
  const auto result = store_->append(*sid, std::move(*validated), now);
  if (const auto* a = std::get_if<store::Appended>(&result)) return json_response(201, {{"seq", a->event.seq}});
  return ApiResponse{204, "application/json", "", {}};
}

std::optional<auth::Viewer> Service::viewer(const ApiRequest& request, bool allow_query_token) const {
  std::optional<std::string> token;
  if (const auto h = request.header("authorization"); h && h->size() > 7 && h->compare(0, 7, "Bearer ") == 0) {
    token = h->substr(7);
  } else if (allow_query_token) {
    token = request.query_param("token");
  }
  if (!token) return std::nullopt;
  if (token->starts_with("v1.")) {
    if (auto principal = identity_.verify(*token, clock_())) return auth::VerifiedPrincipal{*principal};
    return std::nullopt;
  }
  const auto sid = model::SessionId::from_hex(*token);
  if (!sid || !store_->find_session(*sid)) return std::nullopt;
  return auth::SessionToken{*sid};
}

ApiResponse Service::list_activities(const ApiRequest& request) {
  if (wants_html(request)) {
    if (auto r = static_file(request, true)) return *r;
  }
  const auto v = viewer(request, false);
  if (!v) return error_response(401, "invalid_token");
  const auto* principal = std::get_if<auth::VerifiedPrincipal>(&*v);
  if (principal == nullptr) return error_response(403, "denied");
  json out = json::array();
  for (const auto& cfg : activities_) {
    if (auth::authorize(*v, cfg, {cfg.activity_id, std::nullopt}) != auth::Role::teacher) continue;
    out.push_back({{"activity_id", cfg.activity_id}, {"course_label", cfg.course_label}, {"exercises", cfg.exercise_order}});
  }
  return json_response(200, {{"principal", principal->email}, {"activities", out}});
}

ApiResponse Service::read(const std::vector<std::string>& seg, const ApiRequest& request) {
  const bool blob_route = seg.size() == 7 && seg[2] == "sessions" && seg[4] == "blobs";
  if (!blob_route && wants_html(request)) {
    if (auto r = static_file(request, true)) return *r;
  }
  const auto v = viewer(request, blob_route);
  if (!v) return error_response(401, "invalid_token");
  const auto* cfg = activity(seg[1]);
  if (cfg == nullptr) return error_response(404, "unknown_activity");

  auth::ResourceRef resource{cfg->activity_id, std::nullopt};
  if (seg.size() >= 4 && seg[2] == "sessions") {
    const auto sid = model::SessionId::from_hex(seg[3]);
    if (!sid) return error_response(404, "unknown_session");
    resource.session_id = *sid;
  }
  if (auth::authorize(*v, *cfg, resource) == auth::Role::denied) return error_response(403, "denied");

  const auto& id = cfg->activity_id;
  const std::size_t n = seg.size();
  if (resource.session_id) {
    const auto session = store_->find_session(*resource.session_id);
    if (!session || session->activity_id != id) return error_response(404, "unknown_session");
    if (n == 4) {
      std::optional<std::uint64_t> until;
      if (const auto u = request.query_param("until")) {
        until = parse_uint<std::uint64_t>(*u);
        if (!until) throw BadRequest{"until must be a non-negative integer"};
      }
      return json_response(200, analytics::to_json(analytics::build_session_view(*store_, *resource.session_id, until,
                                                                                 renderers_)));
    }
    if (blob_route) return blob(*resource.session_id, seg[5], seg[6]);
    return error_response(404, "not_found");
  }
  if (n == 3 && seg[2] == "dashboard") {
    return json_response(200, analytics::to_json(analytics::build_dashboard(*store_, *cfg, clock_())));
  }
  if (n == 3 && seg[2] == "users") {
    return json_response(200, analytics::to_json(store_->list_users(id)));
  }
  if (n == 3 && seg[2] == "sessions") {
    std::optional<auth::Pseudonym> pseudonym;
    if (const auto p = request.query_param("pseudonym")) {
      try {
        pseudonym = auth::Pseudonym(*p);
      } catch (const std::invalid_argument&) {
        throw BadRequest{"pseudonym must be 12 digits"};
      }
    }
    const auto page = page_from(request);
    return json_response(200, analytics::to_json(store_->list_sessions(id, pseudonym, page)));
  }
  if (n == 4 && seg[2] == "summary" && seg[3] == "exercises") {
    return json_response(200, analytics::to_json(analytics::build_exercise_table(*store_, *cfg)));
  }
  if (n == 4 && seg[2] == "summary" && seg[3] == "timeline") {
    const auto bucket = store::bucket_from_string(request.query_param("bucket").value_or("day"));
    if (!bucket) throw BadRequest{"bucket must be hour, day or week"};
    std::optional<store::TimeRange> range;
    const bool has_from = request.query_param("from").has_value();
    const bool has_to = request.query_param("to").has_value();
    if (has_from != has_to) throw BadRequest{"from and to go together"};
    if (has_from) range = store::TimeRange{instant_param(request, "from"), instant_param(request, "to")};
    return json_response(200, analytics::to_json(analytics::build_timeline(*store_, id, *bucket, range)));
  }
  if (n == 3 && seg[2] == "events") {
    const auto type = request.query_param("type");
    if (!type || !model::is_valid_type_pattern(*type)) throw BadRequest{"type must be an event type or prefix.*"};
    const auto page = page_from(request);
    return json_response(200,
                         analytics::to_json(analytics::build_event_listing(*store_, id, *type, page, renderers_)));
  }
  return error_response(404, "not_found");
}

ApiResponse Service::mylog(const std::vector<std::string>& seg, const ApiRequest& request) {
  if (seg.size() != 2) return error_response(404, "not_found");
  if (wants_html(request)) {
    if (auto r = static_file(request, true)) return *r;
  }
  const auto sid = model::SessionId::from_hex(seg[1]);
  const auto session = sid ? store_->find_session(*sid) : std::nullopt;
  if (!session) return error_response(401, "invalid_token");
  const auto* cfg = activity(session->activity_id);
  if (cfg == nullptr) return error_response(404, "unknown_activity");
  const auth::Viewer v = auth::SessionToken{*sid};
  if (auth::authorize(v, *cfg, {cfg->activity_id, *sid}) != auth::Role::learner_self) {
    return error_response(403, "denied");
  }
  auto body = analytics::to_json(analytics::build_session_view(*store_, *sid, std::nullopt, renderers_));
  body["course_label"] = cfg->course_label;
  return json_response(200, body);
}

ApiResponse Service::blob(const model::SessionId& sid, const std::string& seq_text, const std::string& field) {
  const auto seq = parse_uint<std::uint64_t>(seq_text);
  if (!seq) return error_response(404, "not_found");
  const auto event = store_->find_event(sid, *seq);
  if (!event || field == "learner_email") return error_response(404, "not_found");
  const auto* value = event->envelope.find(field);
  if (value == nullptr || value->kind() != model::FieldKind::blob) return error_response(404, "not_found");
  const auto& b = value->as_blob();
  ApiResponse r;
  r.content_type = safe_header_value(b.media_type) ? b.media_type : "application/octet-stream";
  r.body.assign(b.bytes.begin(), b.bytes.end());
  r.headers = {{"Cache-Control", "private, max-age=3600"},
               {"X-Content-Type-Options", "nosniff"},
               {"Content-Security-Policy", "sandbox"}};
  return r;
}

std::optional<ApiResponse> Service::static_file(const ApiRequest& request, bool console_route) {
  if (static_dir_.empty()) return std::nullopt;
  std::filesystem::path rel = console_route ? "index.html" : std::filesystem::path(request.path).relative_path();
  if (rel.empty()) rel = "index.html";
  rel = rel.lexically_normal();
  for (const auto& part : rel) {
    if (part == ".." || part.string().starts_with(".")) return std::nullopt;
  }
  auto file = static_dir_ / rel;
  std::error_code ec;
  if (std::filesystem::is_directory(file, ec)) file /= "index.html";
  if (!std::filesystem::is_regular_file(file, ec)) return std::nullopt;
  std::ifstream in(file, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream s;
  s << in.rdbuf();
  ApiResponse r;
  r.content_type = content_type_for(file);
  r.body = s.str();
  r.headers.emplace_back("X-Content-Type-Options", "nosniff");
  return r;
}

}  // namespace lalog::server
