#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lalog/common/time.hpp"

namespace lalog::model {

enum class FieldKind { string, number, date, blob, kvlist };

std::string_view to_string(FieldKind kind);
std::optional<FieldKind> field_kind_from_string(std::string_view text);

struct Blob {
  std::string media_type;
  std::vector<std::uint8_t> bytes;

  bool operator==(const Blob&) const = default;
};

struct Field;
using KvList = std::vector<Field>;

/// Tagged value of one event field. Numbers are always finite.
class FieldValue {
 public:
  FieldValue() : value_(std::string{}) {}

  static FieldValue string(std::string text) { return FieldValue(std::move(text)); }
  /// Throws std::invalid_argument for NaN or infinity.
  static FieldValue number(double value);
  static FieldValue date(Instant value) { return FieldValue(value); }
  static FieldValue blob(std::string media_type, std::vector<std::uint8_t> bytes) {
    return FieldValue(Blob{std::move(media_type), std::move(bytes)});
  }
  static FieldValue kvlist(KvList entries);

  FieldKind kind() const { return static_cast<FieldKind>(value_.index()); }

  const std::string& as_string() const { return std::get<std::string>(value_); }
  double as_number() const { return std::get<double>(value_); }
  Instant as_date() const { return std::get<Instant>(value_); }
  const Blob& as_blob() const { return std::get<Blob>(value_); }
  const KvList& as_kvlist() const { return std::get<KvList>(value_); }

  friend bool operator==(const FieldValue& a, const FieldValue& b);

 private:
  template <typename T>
  explicit FieldValue(T value) : value_(std::move(value)) {}

  // Alternative order matches FieldKind.
  std::variant<std::string, double, Instant, Blob, KvList> value_;
};

struct Field {
  std::string name;
  FieldValue value;

  bool operator==(const Field&) const = default;
};

inline bool operator==(const FieldValue& a, const FieldValue& b) {
  if (a.value_.index() != b.value_.index()) return false;
  // Compare doubles bitwise so that -0.0 and 0.0 stay distinct after a round trip.
  if (a.kind() == FieldKind::number) {
    return std::bit_cast<std::uint64_t>(a.as_number()) == std::bit_cast<std::uint64_t>(b.as_number());
  }
  return a.value_ == b.value_;
}

/// One semantic log event as sent by a learning tool.
struct EventEnvelope {
  std::string event_type;
  Instant client_timestamp{};
  std::string exercise;
  std::vector<Field> fields;

  const FieldValue* find(std::string_view name) const;
  bool operator==(const EventEnvelope&) const = default;
};

/// 128-bit session identifier; its hex form doubles as the learner's bearer token.
class SessionId {
 public:
  using Bytes = std::array<std::uint8_t, 16>;

  SessionId() = default;
  explicit SessionId(const Bytes& bytes) : bytes_(bytes) {}

  static SessionId random();
  static std::optional<SessionId> from_hex(std::string_view hex);

  std::string hex() const;
  const Bytes& bytes() const { return bytes_; }

  auto operator<=>(const SessionId&) const = default;

 private:
  Bytes bytes_{};
};

struct SessionIdHash {
  std::size_t operator()(const SessionId& id) const noexcept;
};

/// An envelope after it has been persisted under a session.
struct StoredEvent {
  EventEnvelope envelope;
  SessionId session_id;
  std::uint64_t seq = 0;
  Instant server_timestamp{};
  std::vector<std::string> redactions;

  bool operator==(const StoredEvent&) const = default;
};

/// Removes the named top-level fields and records them in `redactions`.
/// Idempotent; names that are absent are still recorded.
StoredEvent redact(StoredEvent stored, const std::vector<std::string>& field_names);

/// Exact match, or prefix match when `pattern` ends in ".*".
bool match_type(std::string_view event_type, std::string_view pattern);

bool is_valid_type_token(std::string_view token);
/// A token, optionally followed by ".*".
bool is_valid_type_pattern(std::string_view pattern);

}  // namespace lalog::model
