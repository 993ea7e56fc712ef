#include "lalog/server/config.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "lalog/common/crypto.hpp"
#include "lalog/common/xml.hpp"
#include "lalog/model/event.hpp"

namespace lalog::server {

namespace {

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError(file.string(), 0, "cannot open file");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

class ActivityParser {
 public:
  explicit ActivityParser(std::string source) : source_(std::move(source)) {}

  auth::ActivityConfig parse(std::string_view text) {
    xml::Element root;
    try {
      root = xml::parse(text);
    } catch (const xml::ParseError& e) {
      throw ConfigError(source_, e.line(), e.what());
    }
    if (root.name != "activity") fail(root, "root element must be <activity>, found <" + root.name + ">");
    only_attributes(root, {"id"});
    auth::ActivityConfig cfg;
    cfg.activity_id = required_attribute(root, "id");
    if (!is_valid_activity_id(cfg.activity_id)) {
      fail(root, "activity id must match [A-Za-z0-9._-]{1,64}: \"" + cfg.activity_id + "\"");
    }
    std::set<std::string> seen;
    for (const auto& child : root.children) {
      if (!seen.insert(child.name).second) fail(child, "duplicate <" + child.name + ">");
      if (child.name == "course") {
        no_children(child);
        cfg.course_label = trim(child.text);
      } else if (child.name == "applicationKey") {
        cfg.application_key = hex_attribute(child, 32);
      } else if (child.name == "pseudonymSalt") {
        cfg.pseudonym_salt = hex_attribute(child, 16);
      } else if (child.name == "whitelist") {
        for (const auto& host : list(child, "host")) {
          const std::string origin = trim(host.text);
          if (!is_valid_origin(origin)) fail(host, "not an origin (scheme://host[:port]): \"" + origin + "\"");
          cfg.host_whitelist.push_back(origin);
        }
      } else if (child.name == "teachers") {
        for (const auto& email : list(child, "email")) {
          const std::string address = trim(email.text);
          if (address.empty() || address.find('@') == std::string::npos) fail(email, "not an email address");
          cfg.teacher_principals.push_back(address);
        }
      } else if (child.name == "triggers") {
        for (const auto& t : child.children) {
          if (t.name != "trigger") fail(t, "expected <trigger>, found <" + t.name + ">");
          cfg.trigger_bindings.push_back(trigger(t, cfg.activity_id));
        }
      } else if (child.name == "exercises") {
        std::set<std::string> names;
        for (const auto& ex : list(child, "exercise")) {
          only_attributes(ex, {"name"});
          std::string name = required_attribute(ex, "name");
          if (name.empty()) fail(ex, "exercise name must not be empty");
          if (!names.insert(name).second) fail(ex, "duplicate exercise \"" + name + "\"");
          cfg.exercise_order.push_back(std::move(name));
        }
      } else {
        fail(child, "unknown element <" + child.name + ">");
      }
    }
    if (cfg.application_key.empty()) fail(root, "missing <applicationKey>");
    if (cfg.pseudonym_salt.empty()) fail(root, "missing <pseudonymSalt>");
    return cfg;
  }

 private:
  [[noreturn]] void fail(const xml::Element& at, const std::string& message) const {
    throw ConfigError(source_, at.line, message);
  }

  std::string required_attribute(const xml::Element& e, std::string_view key) const {
    const auto* v = e.attribute(key);
    if (v == nullptr) fail(e, "<" + e.name + "> needs attribute " + std::string(key));
    return *v;
  }

  void only_attributes(const xml::Element& e, std::initializer_list<std::string_view> allowed) const {
    for (const auto& [k, v] : e.attributes) {
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
        fail(e, "unexpected attribute " + k + " on <" + e.name + ">");
      }
    }
  }

  void no_children(const xml::Element& e) const {
    if (!e.children.empty()) fail(e.children.front(), "<" + e.name + "> takes text only");
  }

  std::vector<std::uint8_t> hex_attribute(const xml::Element& e, std::size_t bytes) const {
    only_attributes(e, {"hex"});
    no_children(e);
    const auto value = crypto::from_hex(trim(required_attribute(e, "hex")));
    if (!value || value->size() != bytes) {
      fail(e, "<" + e.name + " hex=...> must hold exactly " + std::to_string(bytes) + " bytes of hex");
    }
    return *value;
  }

  const std::vector<xml::Element>& list(const xml::Element& parent, std::string_view item) const {
    for (const auto& c : parent.children) {
      if (c.name != item) fail(c, "expected <" + std::string(item) + "> inside <" + parent.name + ">");
      if (!c.children.empty()) fail(c.children.front(), "<" + c.name + "> takes text only");
    }
    return parent.children;
  }

  trigger::TriggerBinding trigger(const xml::Element& t, const std::string& activity_id) const {
    trigger::TriggerBinding b;
    b.activity_id = activity_id;
    b.event_type_pattern = required_attribute(t, "on");
    if (!model::is_valid_type_pattern(b.event_type_pattern)) {
      fail(t, "invalid event type pattern \"" + b.event_type_pattern + "\"");
    }
    const std::string kind = required_attribute(t, "kind");
    if (kind != "sendMail") fail(t, "unknown trigger kind \"" + kind + "\" (supported: sendMail)");
    b.kind = trigger::TriggerKind::send_mail;
    for (const auto& [k, v] : t.attributes) {
      if (k == "on" || k == "kind") continue;
      if (k != "to") fail(t, "unexpected attribute " + k + " on <trigger>");
      b.params.emplace_back(k, v);
    }
    if (!t.children.empty()) fail(t.children.front(), "<trigger> takes no children");
    return b;
  }

  std::string source_;
};

long line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<long>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

ConfigError::ConfigError(std::string source, long line, const std::string& message)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + message), source_(std::move(source)), line_(line) {}

bool is_valid_activity_id(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
  });
}

bool is_valid_origin(std::string_view origin) {
  std::string_view rest;
  if (origin.starts_with("https://")) rest = origin.substr(8);
  else if (origin.starts_with("http://")) rest = origin.substr(7);
  else return false;
  if (rest.empty()) return false;
  std::string_view host = rest;
  if (const auto colon = rest.rfind(':'); colon != std::string_view::npos && rest.front() != '[') {
    host = rest.substr(0, colon);
    const auto port = rest.substr(colon + 1);
    int value = 0;
    const auto [p, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
    if (port.empty() || ec != std::errc{} || p != port.data() + port.size() || value < 1 || value > 65535) return false;
  }
  if (host.empty()) return false;
  return std::all_of(host.begin(), host.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' || c == '-' ||
           c == '[' || c == ']' || c == ':';
  });
}

auth::ActivityConfig parse_activity_config(std::string_view xml_text, const std::string& source_name) {
  return ActivityParser(source_name).parse(xml_text);
}

auth::ActivityConfig load_activity_config(const std::filesystem::path& file) {
  return parse_activity_config(read_file(file), file.string());
}

std::vector<auth::ActivityConfig> load_activity_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw ConfigError(dir.string(), 0, "not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".xml") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<auth::ActivityConfig> out;
  std::map<std::string, std::string> origin_of;
  for (const auto& f : files) {
    auto cfg = load_activity_config(f);
    if (const auto [it, inserted] = origin_of.emplace(cfg.activity_id, f.string()); !inserted) {
      throw ConfigError(f.string(), 1, "activity id \"" + cfg.activity_id + "\" already defined in " + it->second);
    }
    out.push_back(std::move(cfg));
  }
  return out;
}

std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

ServiceConfig parse_service_config(std::string_view json_text, const std::filesystem::path& base_dir,
                                   const std::string& source_name, const EnvLookup& env) {
  using nlohmann::json;
  ServiceConfig c;
  auto resolve = [&](const std::filesystem::path& p) { return p.is_absolute() || p.empty() ? p : base_dir / p; };
  c.config_dir = resolve(c.config_dir);
  c.data_path = resolve(c.data_path);
  c.static_dir = resolve(c.static_dir);
  c.dead_letter_dir = resolve(c.dead_letter_dir);
  c.mail.outbox_dir = resolve(c.mail.outbox_dir);

  auto error = [&](long line, const std::string& m) { return ConfigError(source_name, line, m); };

  auto set_listen = [&](const std::string& value, long line) {
    const auto colon = value.rfind(':');
    int port = 0;
    if (colon == std::string::npos ||
        std::from_chars(value.data() + colon + 1, value.data() + value.size(), port).ec != std::errc{} || port < 0 ||
        port > 65535) {
      throw error(line, "listen must be host:port, got \"" + value + "\"");
    }
    c.listen_host = value.substr(0, colon);
    c.listen_port = port;
  };
  auto set_secret = [&](const std::string& value, long line) {
    auto bytes = crypto::from_hex(value);
    if (!bytes || bytes->size() < 16) throw error(line, "identity_secret must be at least 16 bytes of hex");
    c.identity_secret = std::move(*bytes);
  };

  if (!trim(json_text).empty()) {
    json doc;
    try {
      doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
      throw error(line_of(json_text, e.byte > 0 ? e.byte - 1 : 0), e.what());
    }
    if (!doc.is_object()) throw error(1, "top level must be an object");
    try {
      for (const auto& [key, value] : doc.items()) {
        if (key == "listen") set_listen(value.get<std::string>(), 0);
        else if (key == "base_url") c.base_url = value.get<std::string>();
        else if (key == "config_dir") c.config_dir = resolve(value.get<std::string>());
        else if (key == "data_path") c.data_path = resolve(value.get<std::string>());
        else if (key == "static_dir") c.static_dir = resolve(value.get<std::string>());
        else if (key == "dead_letter_dir") c.dead_letter_dir = resolve(value.get<std::string>());
        else if (key == "identity_secret") set_secret(value.get<std::string>(), 0);
        else if (key == "trigger_workers") c.trigger_workers = value.get<std::size_t>();
        else if (key == "http_threads") c.http_threads = value.get<std::size_t>();
        else if (key == "limits") {
          for (const auto& [k, v] : value.items()) {
            if (k == "max_body_bytes") c.max_body_bytes = v.get<std::size_t>();
            else if (k == "events_per_second") c.events_per_second = v.get<double>();
            else throw error(0, "unknown key limits." + k);
          }
        } else if (key == "mail") {
          for (const auto& [k, v] : value.items()) {
            if (k == "mode") {
              const auto mode = v.get<std::string>();
              if (mode == "outbox") c.mail.mode = MailSettings::Mode::outbox;
              else if (mode == "smtp") c.mail.mode = MailSettings::Mode::smtp;
              else throw error(0, "mail.mode must be \"outbox\" or \"smtp\"");
            } else if (k == "outbox_dir") c.mail.outbox_dir = resolve(v.get<std::string>());
            else if (k == "url") c.mail.smtp.url = v.get<std::string>();
            else if (k == "username") c.mail.smtp.username = v.get<std::string>();
            else if (k == "password") c.mail.smtp.password = v.get<std::string>();
            else if (k == "from") c.mail.smtp.from = v.get<std::string>();
            else if (k == "require_tls") c.mail.smtp.require_tls = v.get<bool>();
            else throw error(0, "unknown key mail." + k);
          }
        } else {
          throw error(0, "unknown key " + key);
        }
      }
    } catch (const json::exception& e) {
      throw error(0, std::string("wrong value type: ") + e.what());
    }
  }

  auto num = [&](const std::string& name, const std::string& v) {
    std::size_t n = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError(name, 0, "not a non-negative integer: " + v);
    return n;
  };
  if (auto v = env("LALOG_LISTEN")) set_listen(*v, 0);
  if (auto v = env("LALOG_BASE_URL")) c.base_url = *v;
  if (auto v = env("LALOG_CONFIG_DIR")) c.config_dir = *v;
  if (auto v = env("LALOG_DATA_PATH")) c.data_path = *v;
  if (auto v = env("LALOG_STATIC_DIR")) c.static_dir = *v;
  if (auto v = env("LALOG_DEAD_LETTER_DIR")) c.dead_letter_dir = *v;
  if (auto v = env("LALOG_IDENTITY_SECRET")) set_secret(*v, 0);
  if (auto v = env("LALOG_MAX_BODY_BYTES")) c.max_body_bytes = num("LALOG_MAX_BODY_BYTES", *v);
  if (auto v = env("LALOG_EVENTS_PER_SECOND")) c.events_per_second = static_cast<double>(num("LALOG_EVENTS_PER_SECOND", *v));
  if (auto v = env("LALOG_TRIGGER_WORKERS")) c.trigger_workers = num("LALOG_TRIGGER_WORKERS", *v);
  if (auto v = env("LALOG_HTTP_THREADS")) c.http_threads = num("LALOG_HTTP_THREADS", *v);
  if (auto v = env("LALOG_MAIL_MODE")) {
    if (*v == "outbox") c.mail.mode = MailSettings::Mode::outbox;
    else if (*v == "smtp") c.mail.mode = MailSettings::Mode::smtp;
    else throw ConfigError("LALOG_MAIL_MODE", 0, "must be outbox or smtp");
  }
  if (auto v = env("LALOG_OUTBOX_DIR")) c.mail.outbox_dir = *v;
  if (auto v = env("LALOG_SMTP_URL")) c.mail.smtp.url = *v;
  if (auto v = env("LALOG_SMTP_USERNAME")) c.mail.smtp.username = *v;
  if (auto v = env("LALOG_SMTP_PASSWORD")) c.mail.smtp.password = *v;
  if (auto v = env("LALOG_SMTP_FROM")) c.mail.smtp.from = *v;
  if (auto v = env("LALOG_SMTP_REQUIRE_TLS")) c.mail.smtp.require_tls = (*v == "1" || *v == "true");

  while (c.base_url.size() > 1 && c.base_url.back() == '/') c.base_url.pop_back();
  if (!(c.base_url.starts_with("http://") || c.base_url.starts_with("https://")) || c.base_url.find("://") + 3 >= c.base_url.size()) {
    throw error(0, "base_url must be an absolute http(s) URL, got \"" + c.base_url + "\"");
  }
  if (c.identity_secret.empty()) throw error(0, "identity_secret is required (config or LALOG_IDENTITY_SECRET)");
  if (c.mail.mode == MailSettings::Mode::smtp && c.mail.smtp.url.empty()) throw error(0, "mail.url is required for smtp");
  if (c.events_per_second <= 0) throw error(0, "limits.events_per_second must be positive");
  if (c.max_body_bytes == 0) throw error(0, "limits.max_body_bytes must be positive");
  if (c.trigger_workers == 0) c.trigger_workers = 1;
  if (c.http_threads == 0) c.http_threads = 1;
  return c;
}

ServiceConfig load_service_config(const std::filesystem::path& file, const EnvLookup& env) {
  return parse_service_config(read_file(file), file.parent_path(), file.string(), env);
}

}  // namespace lalog::server
