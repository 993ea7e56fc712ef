#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lalog/auth/activity_config.hpp"
#include "lalog/trigger/mail.hpp"

namespace lalog::server {

/// Configuration problem with its origin, rendered as `file:line: message`.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string source, long line, const std::string& message);
  const std::string& source() const noexcept { return source_; }
  long line() const noexcept { return line_; }

 private:
  std::string source_;
  long line_;
};

/// Parses one activity XML document (docs/api.md, "Activity configuration").
auth::ActivityConfig parse_activity_config(std::string_view xml_text, const std::string& source_name);
auth::ActivityConfig load_activity_config(const std::filesystem::path& file);
/// Every `*.xml` in the directory, sorted by file name. Duplicate ids are an error.
std::vector<auth::ActivityConfig> load_activity_dir(const std::filesystem::path& dir);

bool is_valid_activity_id(std::string_view id);
/// `scheme://host[:port]` with scheme http or https and nothing after the authority.
bool is_valid_origin(std::string_view origin);

struct MailSettings {
  enum class Mode { outbox, smtp };
  Mode mode = Mode::outbox;
  std::filesystem::path outbox_dir = "outbox";
  trigger::SmtpOptions smtp;
};

struct ServiceConfig {
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;
  /// Absolute URL under which the service is reachable; used in emailed links.
  std::string base_url = "http://127.0.0.1:8080";
  std::filesystem::path config_dir = "activities";
  /// Append-log file. Empty keeps everything in memory.
  std::filesystem::path data_path = "data/events.log";
  std::filesystem::path static_dir = "web";
  std::filesystem::path dead_letter_dir = "dead-letter";
  MailSettings mail;
  std::vector<std::uint8_t> identity_secret;
  std::size_t max_body_bytes = 6 * 1024 * 1024;
  double events_per_second = 50.0;
  std::size_t trigger_workers = 2;
  std::size_t http_threads = 8;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string& name)>;
std::optional<std::string> process_env(const std::string& name);

/// Reads a JSON file (may be empty for defaults), applies LALOG_* overrides and
/// resolves relative paths against the file's directory. Validates the result.
ServiceConfig load_service_config(const std::filesystem::path& file, const EnvLookup& env = process_env);
ServiceConfig parse_service_config(std::string_view json_text, const std::filesystem::path& base_dir,
                                   const std::string& source_name, const EnvLookup& env = process_env);

}  // namespace lalog::server
