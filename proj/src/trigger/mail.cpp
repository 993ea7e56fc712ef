#include "lalog/trigger/mail.hpp"

#include <curl/curl.h>

#include <array>
#include <cstring>
#include <fstream>
#include <memory>

#include "lalog/common/crypto.hpp"

namespace lalog::trigger {

namespace {

bool is_ascii(std::string_view s) {
  for (char c : s) {
    if (static_cast<unsigned char>(c) >= 0x80 || c == '\r' || c == '\n') return false;
  }
  return true;
}

// RFC 2047 encoded-word for non-ASCII header values.
std::string header_value(std::string_view s) {
  if (is_ascii(s)) return std::string(s);
  return "=?UTF-8?B?" + crypto::to_base64(crypto::as_bytes(s)) + "?=";
}

std::string rfc5322_date(Instant t) {
  using namespace std::chrono;
  static constexpr std::array<const char*, 7> kDays = {"Sun", "Mon", "Tue", "Wed", "Thu", "Fri", "Sat"};
  static constexpr std::array<const char*, 12> kMonths = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                                          "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss hms{floor<seconds>(t - day)};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s, %02u %s %04d %02ld:%02ld:%02ld +0000", kDays[weekday{day}.c_encoding()],
                static_cast<unsigned>(ymd.day()), kMonths[static_cast<unsigned>(ymd.month()) - 1],
                static_cast<int>(ymd.year()), static_cast<long>(hms.hours().count()),
                static_cast<long>(hms.minutes().count()), static_cast<long>(hms.seconds().count()));
  return buf;
}

// Normalises line endings to CRLF.
std::string crlf(std::string_view text) {
  std::string out;
  out.reserve(text.size() + text.size() / 40);
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\r') continue;
    if (text[i] == '\n') out += "\r\n";
    else out += text[i];
  }
  return out;
}

std::string wrapped_base64(const std::vector<std::uint8_t>& bytes) {
  const std::string b64 = crypto::to_base64(bytes);
  std::string out;
  for (std::size_t i = 0; i < b64.size(); i += 76) {
    out += b64.substr(i, 76);
    out += "\r\n";
  }
  return out;
}

struct CurlGlobal {
  CurlGlobal() { curl_global_init(CURL_GLOBAL_DEFAULT); }
  ~CurlGlobal() { curl_global_cleanup(); }
};

struct Upload {
  const std::string* data;
  std::size_t pos = 0;
};

std::size_t read_upload(char* buffer, std::size_t size, std::size_t nitems, void* userp) {
  auto* up = static_cast<Upload*>(userp);
  const std::size_t n = std::min(size * nitems, up->data->size() - up->pos);
  std::memcpy(buffer, up->data->data() + up->pos, n);
  up->pos += n;
  return n;
}

}  // namespace

std::string render_message(const NotificationMessage& m, const std::string& from) {
  std::string out;
  out += "From: " + from + "\r\n";
  out += "To: " + m.to + "\r\n";
  out += "Subject: " + header_value(m.subject) + "\r\n";
  out += "Date: " + rfc5322_date(m.created_at) + "\r\n";
  out += "Message-ID: <" + m.activity_id + "." + m.session_hex + "." + std::to_string(m.seq) + "." +
         std::to_string(m.binding_index) + "@lalog>\r\n";
  out += "X-Lalog-Activity: " + m.activity_id + "\r\n";
  out += "X-Lalog-Session: " + m.session_hex + "\r\n";
  out += "X-Lalog-Seq: " + std::to_string(m.seq) + "\r\n";
  out += "MIME-Version: 1.0\r\n";
  if (!m.attachment) {
    out += "Content-Type: text/plain; charset=utf-8\r\n";
    out += "Content-Transfer-Encoding: 8bit\r\n\r\n";
    out += crlf(m.body);
    return out;
  }
  const std::string boundary = "lalog-" + m.session_hex + "-" + std::to_string(m.seq);
  out += "Content-Type: multipart/mixed; boundary=\"" + boundary + "\"\r\n\r\n";
  out += "--" + boundary + "\r\n";
  out += "Content-Type: text/plain; charset=utf-8\r\n";
  out += "Content-Transfer-Encoding: 8bit\r\n\r\n";
  out += crlf(m.body);
  out += "\r\n--" + boundary + "\r\n";
  out += "Content-Type: " + m.attachment->media_type + "\r\n";
  out += "Content-Transfer-Encoding: base64\r\n";
  out += "Content-Disposition: attachment; filename=\"" + m.attachment->filename + "\"\r\n\r\n";
  out += wrapped_base64(m.attachment->bytes);
  out += "--" + boundary + "--\r\n";
  return out;
}

std::string message_file_name(const NotificationMessage& m) {
  return m.activity_id + "-" + m.session_hex + "-" + std::to_string(m.seq) + "-" + std::to_string(m.binding_index) +
         ".eml";
}

void write_file_atomically(const std::filesystem::path& dir, const std::string& name, const std::string& bytes) {
  std::filesystem::create_directories(dir);
  const auto tmp = dir / ("." + name + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw MailError("cannot write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, dir / name, ec);
  if (ec) throw MailError("cannot rename into " + dir.string() + ": " + ec.message());
}

OutboxGateway::OutboxGateway(std::filesystem::path dir, std::string from) : dir_(std::move(dir)), from_(std::move(from)) {}

void OutboxGateway::send(const NotificationMessage& message) {
  write_file_atomically(dir_, message_file_name(message), render_message(message, from_));
}

SmtpGateway::SmtpGateway(SmtpOptions options) : options_(std::move(options)) {}

void SmtpGateway::send(const NotificationMessage& message) {
  static const CurlGlobal global;
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
  if (!curl) throw MailError("curl_easy_init failed");
  const std::string payload = render_message(message, options_.from);
  Upload upload{&payload};
  const std::string from = "<" + options_.from + ">";
  const std::string rcpt = "<" + message.to + ">";
  curl_slist* recipients = curl_slist_append(nullptr, rcpt.c_str());
  std::unique_ptr<curl_slist, decltype(&curl_slist_free_all)> guard(recipients, curl_slist_free_all);

  CURL* h = curl.get();
  curl_easy_setopt(h, CURLOPT_URL, options_.url.c_str());
  curl_easy_setopt(h, CURLOPT_MAIL_FROM, from.c_str());
  curl_easy_setopt(h, CURLOPT_MAIL_RCPT, recipients);
  curl_easy_setopt(h, CURLOPT_READFUNCTION, read_upload);
  curl_easy_setopt(h, CURLOPT_READDATA, &upload);
  curl_easy_setopt(h, CURLOPT_UPLOAD, 1L);
  curl_easy_setopt(h, CURLOPT_TIMEOUT, options_.timeout_seconds);
  curl_easy_setopt(h, CURLOPT_NOSIGNAL, 1L);
  curl_easy_setopt(h, CURLOPT_USE_SSL, options_.require_tls ? CURLUSESSL_ALL : CURLUSESSL_TRY);
  if (!options_.username.empty()) {
    curl_easy_setopt(h, CURLOPT_USERNAME, options_.username.c_str());
    curl_easy_setopt(h, CURLOPT_PASSWORD, options_.password.c_str());
  }
  const CURLcode rc = curl_easy_perform(h);
  if (rc != CURLE_OK) throw MailError(std::string("smtp: ") + curl_easy_strerror(rc));
}

}  // namespace lalog::trigger
