#pragma once

#include <chrono>
#include <map>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "lalog/auth/activity_config.hpp"
#include "lalog/auth/pseudonym.hpp"
#include "lalog/common/time.hpp"
#include "lalog/model/event.hpp"

// Signed session launch from the LMS (see docs/launch-protocol.md).
namespace lalog::auth {

inline constexpr std::chrono::seconds kLaunchWindow{300};

struct LaunchRequest {
  std::string activity_id;
  std::string user_ref;
  Instant issued_at{};
  /// 16 random bytes, hex.
  std::string nonce;
  std::string origin;
  bool opt_out = false;
  /// HMAC-SHA256 of canonical_string(), hex.
  std::string signature;
};

/// `activity_id \n user_ref \n issued_at \n nonce \n origin \n opt_out`, no trailing newline.
std::string canonical_string(const LaunchRequest& req);

/// LMS-side helper: fills `req.signature`.
void sign(LaunchRequest& req, std::span<const std::uint8_t> application_key);

class LaunchError : public std::runtime_error {
 public:
  enum class Code { bad_signature, stale_timestamp, replayed_nonce, origin_not_whitelisted, unknown_activity, malformed_request };

  explicit LaunchError(Code code);
  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

std::string_view to_string(LaunchError::Code code);

/// Nonces seen per activity, kept until their launch window closes.
class NonceCache {
 public:
  explicit NonceCache(std::chrono::milliseconds window = kLaunchWindow) : window_(window) {}

  /// Atomically records the nonce; false when it was already present and unexpired.
  bool insert(const std::string& activity_id, const std::string& nonce, Instant issued_at, Instant now);
  std::size_t size() const;

 private:
  std::chrono::milliseconds window_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::unordered_map<std::string, Instant>> seen_;
  Instant last_prune_{};
};

/// Result of a successful verify_launch. Holds the user reference only until
/// create_session turns it into a pseudonym.
struct VerifiedLaunch {
  std::string activity_id;
  std::string user_ref;
  bool opt_out = false;
  Instant issued_at{};
};

VerifiedLaunch verify_launch(const LaunchRequest& req, const ActivityConfig& cfg, Instant now, NonceCache& nonces);

struct Session {
  model::SessionId session_id;
  std::string activity_id;
  Pseudonym pseudonym;
  Instant started_at{};
  bool opt_out = false;

  bool operator==(const Session&) const = default;
};

/// Source of fresh session identifiers.
class SessionIdSource {
 public:
  virtual ~SessionIdSource() = default;
  virtual model::SessionId next() = 0;
};

class RandomSessionIds final : public SessionIdSource {
 public:
  model::SessionId next() override { return model::SessionId::random(); }
};

/// Reproducible identifiers for synthetic datasets. Not for production use.
class SeededSessionIds final : public SessionIdSource {
 public:
  explicit SeededSessionIds(std::uint64_t seed) : rng_(seed) {}
  model::SessionId next() override;

 private:
  std::mt19937_64 rng_;
};

/// Derives the pseudonym and drops the user reference. Persisting is the store's job.
Session create_session(VerifiedLaunch&& launch, const ActivityConfig& cfg, Instant now, SessionIdSource& ids);

}  // namespace lalog::auth
