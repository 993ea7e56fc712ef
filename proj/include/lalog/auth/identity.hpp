#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lalog/common/time.hpp"

namespace lalog::auth {

/// Stand-in for an external identity provider. A token is
/// `v1.<base64url(principal)>.<expiry unix seconds>.<hex HMAC-SHA256(secret, "v1.<b64>.<expiry>")>`.
class IdentityVerifier {
 public:
  explicit IdentityVerifier(std::vector<std::uint8_t> secret) : secret_(std::move(secret)) {}

  std::string mint(std::string_view principal, Instant expires_at) const;
  /// The principal when the token is well formed, correctly signed and unexpired.
  std::optional<std::string> verify(std::string_view token, Instant now) const;

 private:
  std::vector<std::uint8_t> secret_;
};

}  // namespace lalog::auth
