#include "lalog/auth/identity.hpp"

#include <charconv>

#include "lalog/common/crypto.hpp"

namespace lalog::auth {

std::string IdentityVerifier::mint(std::string_view principal, Instant expires_at) const {
  const auto expiry = std::chrono::floor<std::chrono::seconds>(expires_at).time_since_epoch().count();
  std::string body = "v1." + crypto::to_base64url(principal) + "." + std::to_string(expiry);
  const auto mac = crypto::hmac_sha256(secret_, body);
  return body + "." + crypto::to_hex(mac);
}

std::optional<std::string> IdentityVerifier::verify(std::string_view token, Instant now) const {
  const auto last_dot = token.rfind('.');
  if (last_dot == std::string_view::npos || !token.starts_with("v1.")) return std::nullopt;
  const auto body = token.substr(0, last_dot);
  const auto mac = crypto::from_hex(token.substr(last_dot + 1));
  if (!mac || !crypto::equal_ct(*mac, crypto::hmac_sha256(secret_, body))) return std::nullopt;

  const auto rest = body.substr(3);
  const auto dot = rest.find('.');
  if (dot == std::string_view::npos) return std::nullopt;
  auto principal = crypto::from_base64url(rest.substr(0, dot));
  const auto expiry_text = rest.substr(dot + 1);
  std::int64_t expiry = 0;
  const auto [ptr, ec] = std::from_chars(expiry_text.data(), expiry_text.data() + expiry_text.size(), expiry);
  if (!principal || principal->empty() || ec != std::errc{} || ptr != expiry_text.data() + expiry_text.size()) {
    return std::nullopt;
  }
  if (now >= Instant{std::chrono::seconds{expiry}}) return std::nullopt;
  return principal;
}

}  // namespace lalog::auth
