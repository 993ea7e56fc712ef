#include "lalog/model/event.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "lalog/common/crypto.hpp"

namespace lalog::model {

namespace {

constexpr std::string_view kKindNames[] = {"string", "number", "date", "blob", "kvlist"};

bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_segment_char(char c) { return is_lower(c) || (c >= '0' && c <= '9') || c == '_'; }

}  // namespace

std::string_view to_string(FieldKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

std::optional<FieldKind> field_kind_from_string(std::string_view text) {
  for (std::size_t i = 0; i < std::size(kKindNames); ++i) {
    if (kKindNames[i] == text) return static_cast<FieldKind>(i);
  }
  return std::nullopt;
}

FieldValue FieldValue::number(double value) {
  if (!std::isfinite(value)) throw std::invalid_argument("number field values must be finite");
  return FieldValue(value);
}

FieldValue FieldValue::kvlist(KvList entries) { return FieldValue(std::move(entries)); }

const FieldValue* EventEnvelope::find(std::string_view name) const {
  auto it = std::find_if(fields.begin(), fields.end(), [&](const Field& f) { return f.name == name; });
  return it == fields.end() ? nullptr : &it->value;
}

SessionId SessionId::random() {
  Bytes bytes{};
  crypto::random_fill(bytes);
  return SessionId(bytes);
}

std::optional<SessionId> SessionId::from_hex(std::string_view hex) {
  if (hex.size() != 32) return std::nullopt;
  auto raw = crypto::from_hex(hex);
  if (!raw) return std::nullopt;
  Bytes bytes{};
  std::copy(raw->begin(), raw->end(), bytes.begin());
  return SessionId(bytes);
}

std::string SessionId::hex() const { return crypto::to_hex(bytes_); }

std::size_t SessionIdHash::operator()(const SessionId& id) const noexcept {
  std::size_t h = 0;
  std::memcpy(&h, id.bytes().data(), sizeof(h));
  return h;
}

StoredEvent redact(StoredEvent stored, const std::vector<std::string>& field_names) {
  auto& fields = stored.envelope.fields;
  for (const auto& name : field_names) {
    std::erase_if(fields, [&](const Field& f) { return f.name == name; });
    if (std::find(stored.redactions.begin(), stored.redactions.end(), name) == stored.redactions.end()) {
      stored.redactions.push_back(name);
    }
  }
  return stored;
}

bool is_valid_type_token(std::string_view token) {
  bool segment_start = true;
  for (char c : token) {
    if (segment_start) {
      if (!is_lower(c)) return false;
      segment_start = false;
    } else if (c == '.') {
      segment_start = true;
    } else if (!is_segment_char(c)) {
      return false;
    }
  }
  return !segment_start;
}

bool is_valid_type_pattern(std::string_view pattern) {
  if (pattern.ends_with(".*")) pattern.remove_suffix(2);
  return is_valid_type_token(pattern);
}

bool match_type(std::string_view event_type, std::string_view pattern) {
  if (pattern.ends_with(".*")) {
    pattern.remove_suffix(1);
    return event_type.size() > pattern.size() && event_type.starts_with(pattern);
  }
  return event_type == pattern;
}

}  // namespace lalog::model
