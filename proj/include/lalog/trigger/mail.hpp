#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lalog/common/time.hpp"

namespace lalog::trigger {

struct Attachment {
  std::string filename;
  std::string media_type;
  std::vector<std::uint8_t> bytes;
};

struct NotificationMessage {
  std::string to;
  std::string subject;
  std::string body;
  std::optional<Attachment> attachment;

  // Provenance, used for headers and outbox file names.
  std::string activity_id;
  std::string session_hex;
  std::uint64_t seq = 0;
  std::size_t binding_index = 0;
  Instant created_at{};
};

class MailError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Outbound mail. `send` returns once the message is accepted and throws MailError otherwise.
class MailGateway {
 public:
  virtual ~MailGateway() = default;
  virtual void send(const NotificationMessage& message) = 0;
};

/// RFC 5322 text with a MIME multipart body when there is an attachment (docs/mail-outbox.md).
std::string render_message(const NotificationMessage& message, const std::string& from);

/// `<activity>-<session>-<seq>-<binding>.eml`
std::string message_file_name(const NotificationMessage& message);

/// Writes one file per message into a directory.
class OutboxGateway final : public MailGateway {
 public:
  explicit OutboxGateway(std::filesystem::path dir, std::string from = "lalog@localhost");
  void send(const NotificationMessage& message) override;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::string from_;
};

struct SmtpOptions {
  /// smtp://host:port or smtps://host:port
  std::string url;
  std::string username;
  std::string password;
  std::string from = "lalog@localhost";
  bool require_tls = false;
  long timeout_seconds = 30;
};

/// Submits messages to an SMTP relay through libcurl.
class SmtpGateway final : public MailGateway {
 public:
  explicit SmtpGateway(SmtpOptions options);
  void send(const NotificationMessage& message) override;

 private:
  SmtpOptions options_;
};

/// Atomically writes `bytes` to `dir/name` (temp file + rename).
void write_file_atomically(const std::filesystem::path& dir, const std::string& name, const std::string& bytes);

}  // namespace lalog::trigger
