#include "lalog/auth/launch.hpp"

#include <algorithm>

#include "lalog/common/crypto.hpp"

namespace lalog::auth {

namespace {

using Code = LaunchError::Code;

void secure_clear(std::string& s) {
  std::fill(s.begin(), s.end(), '\0');
  s.clear();
}

}  // namespace

std::string canonical_string(const LaunchRequest& req) {
  std::string out;
  out.reserve(req.activity_id.size() + req.user_ref.size() + req.nonce.size() + req.origin.size() + 40);
  out += req.activity_id;
  out += '\n';
  out += req.user_ref;
  out += '\n';
  out += format_iso8601(req.issued_at);
  out += '\n';
  out += req.nonce;
  out += '\n';
  out += req.origin;
  out += '\n';
  out += req.opt_out ? "true" : "false";
  return out;
}

void sign(LaunchRequest& req, std::span<const std::uint8_t> application_key) {
  req.signature = crypto::to_hex(crypto::hmac_sha256(application_key, canonical_string(req)));
}

LaunchError::LaunchError(Code code) : std::runtime_error(std::string(to_string(code))), code_(code) {}

std::string_view to_string(LaunchError::Code code) {
  switch (code) {
    case Code::bad_signature: return "bad_signature";
    case Code::stale_timestamp: return "stale_timestamp";
    case Code::replayed_nonce: return "replayed_nonce";
    case Code::origin_not_whitelisted: return "origin_not_whitelisted";
    case Code::unknown_activity: return "unknown_activity";
    case Code::malformed_request: return "malformed_request";
  }
  return "unknown";
}

bool NonceCache::insert(const std::string& activity_id, const std::string& nonce, Instant issued_at, Instant now) {
  std::lock_guard lock(mutex_);
  if (now - last_prune_ > window_) {
    for (auto& [activity, nonces] : seen_) {
      std::erase_if(nonces, [&](const auto& kv) { return kv.second < now; });
    }
    last_prune_ = now;
  }
  auto& nonces = seen_[activity_id];
  const Instant expiry = issued_at + window_;
  auto [it, inserted] = nonces.try_emplace(nonce, expiry);
  if (inserted) return true;
  if (it->second < now) {
    it->second = expiry;
    return true;
  }
  return false;
}

std::size_t NonceCache::size() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& [activity, nonces] : seen_) n += nonces.size();
  return n;
}

VerifiedLaunch verify_launch(const LaunchRequest& req, const ActivityConfig& cfg, Instant now, NonceCache& nonces) {
  if (req.activity_id != cfg.activity_id) throw LaunchError(Code::unknown_activity);
  const auto nonce = crypto::from_hex(req.nonce);
  if (!nonce || nonce->size() != 16) throw LaunchError(Code::malformed_request);

  const auto presented = crypto::from_hex(req.signature);
  const auto expected = crypto::hmac_sha256(cfg.application_key, canonical_string(req));
  if (!presented || !crypto::equal_ct(*presented, expected)) throw LaunchError(Code::bad_signature);

  const auto skew = now > req.issued_at ? now - req.issued_at : req.issued_at - now;
  if (skew > kLaunchWindow) throw LaunchError(Code::stale_timestamp);

  if (std::find(cfg.host_whitelist.begin(), cfg.host_whitelist.end(), req.origin) == cfg.host_whitelist.end()) {
    throw LaunchError(Code::origin_not_whitelisted);
  }
  if (!nonces.insert(cfg.activity_id, req.nonce, req.issued_at, now)) throw LaunchError(Code::replayed_nonce);

  return VerifiedLaunch{req.activity_id, req.user_ref, req.opt_out, req.issued_at};
}

model::SessionId SeededSessionIds::next() {
  model::SessionId::Bytes bytes{};
  for (std::size_t i = 0; i < bytes.size(); i += 8) {
    const std::uint64_t word = rng_();
    for (std::size_t k = 0; k < 8; ++k) bytes[i + k] = static_cast<std::uint8_t>(word >> (8 * k));
  }
  return model::SessionId(bytes);
}

Session create_session(VerifiedLaunch&& launch, const ActivityConfig& cfg, Instant now, SessionIdSource& ids) {
  Session session;
  session.session_id = ids.next();
  session.activity_id = launch.activity_id;
  session.pseudonym = derive_pseudonym(launch.user_ref, cfg.pseudonym_salt);
  session.started_at = now;
  session.opt_out = launch.opt_out;
  secure_clear(launch.user_ref);
  return session;
}

}  // namespace lalog::auth
