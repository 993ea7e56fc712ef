#include "lalog/auth/pseudonym.hpp"

#include <algorithm>
#include <stdexcept>

#include "lalog/common/crypto.hpp"

namespace lalog::auth {

Pseudonym::Pseudonym(std::string digits) : digits_(std::move(digits)) {
  if (digits_.size() != 12 || !std::all_of(digits_.begin(), digits_.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw std::invalid_argument("pseudonym must be 12 decimal digits");
  }
}

Pseudonym derive_pseudonym(std::string_view user_ref, std::span<const std::uint8_t> salt) {
  const auto mac = crypto::hmac_sha256(salt, user_ref);
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < 5; ++i) value = (value << 8) | mac[i];
  value %= 1'000'000'000'000ULL;
  std::string digits(12, '0');
  for (std::size_t i = 12; i-- > 0;) {
    digits[i] = static_cast<char>('0' + value % 10);
    value /= 10;
  }
  return Pseudonym(std::move(digits));
}

}  // namespace lalog::auth
