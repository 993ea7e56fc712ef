#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace lalog::auth {

/// Twelve decimal digits; the only learner key a teacher ever sees.
class Pseudonym {
 public:
  Pseudonym() = default;
  /// Throws std::invalid_argument unless `digits` is exactly 12 decimal digits.
  explicit Pseudonym(std::string digits);

  const std::string& digits() const { return digits_; }
  auto operator<=>(const Pseudonym&) const = default;

 private:
  std::string digits_ = "000000000000";
};

/// First 40 bits of HMAC-SHA256(salt, user_ref), big-endian, modulo 10^12, zero padded.
Pseudonym derive_pseudonym(std::string_view user_ref, std::span<const std::uint8_t> salt);

}  // namespace lalog::auth
