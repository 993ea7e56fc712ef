#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace lalog {

/// UTC instant with millisecond precision. Every timestamp in the system uses it.
using Instant = std::chrono::sys_time<std::chrono::milliseconds>;

Instant now_utc();

/// Canonical form `YYYY-MM-DDTHH:MM:SS.mmmZ`.
std::string format_iso8601(Instant t);

/// Accepts the canonical form and the same form without the fractional part.
std::optional<Instant> parse_iso8601(std::string_view text);

inline std::int64_t to_unix_millis(Instant t) { return t.time_since_epoch().count(); }
inline Instant from_unix_millis(std::int64_t ms) { return Instant{std::chrono::milliseconds{ms}}; }

}  // namespace lalog
