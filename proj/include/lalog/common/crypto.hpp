#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Thin wrappers over libsodium. Every byte sequence is std::uint8_t.
namespace lalog::crypto {

using Bytes = std::vector<std::uint8_t>;
using Mac256 = std::array<std::uint8_t, 32>;

Mac256 hmac_sha256(std::span<const std::uint8_t> key, std::string_view message);

/// Constant-time comparison; false when the sizes differ.
bool equal_ct(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

void random_fill(std::span<std::uint8_t> out);
Bytes random_bytes(std::size_t n);

std::string to_hex(std::span<const std::uint8_t> bytes);
/// Lower- or upper-case hex, even length, nothing else.
std::optional<Bytes> from_hex(std::string_view hex);

/// Standard alphabet with padding.
std::string to_base64(std::span<const std::uint8_t> bytes);
/// Strict standard-alphabet base64; ASCII whitespace between characters is skipped.
std::optional<Bytes> from_base64(std::string_view text);

/// URL-safe alphabet without padding (identity tokens).
std::string to_base64url(std::string_view bytes);
std::optional<std::string> from_base64url(std::string_view text);

inline std::span<const std::uint8_t> as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace lalog::crypto
