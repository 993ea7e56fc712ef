#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lalog/model/event.hpp"

namespace lalog::model {

struct RequiredField {
  std::string name;
  FieldKind kind;
};

struct EventKindSchema {
  std::string event_type;
  std::vector<RequiredField> required_fields;
  std::string description;
  /// Checked for kind when present.
  std::vector<RequiredField> optional_fields{};
  /// When non-empty, the string field `name` must hold one of these values.
  std::string enum_field{};
  std::vector<std::string> enum_values{};
};

/// The five built-in kinds: action, image, question, feedback, helprequest.
const std::vector<EventKindSchema>& builtin_schemas();

inline constexpr std::string_view kVerdictSuccess = "success";
inline constexpr std::string_view kVerdictFailure = "failure";
inline constexpr std::string_view kVerdictPartial = "partial";

struct Limits {
  std::size_t max_blob_bytes = 2u << 20;
  std::size_t max_event_bytes = 4u << 20;
};

class ValidationError : public std::runtime_error {
 public:
  enum class Code { bad_type_token, missing_field, wrong_kind, oversize, duplicate_field };

  ValidationError(Code code, std::string field);

  Code code() const noexcept { return code_; }
  /// Offending field name; empty for bad_type_token and event-level oversize.
  const std::string& field() const noexcept { return field_; }

 private:
  Code code_;
  std::string field_;
};

std::string_view to_string(ValidationError::Code code);

/// An envelope that passed `validate`. Only `validate` creates one.
class ValidatedEvent {
 public:
  const EventEnvelope& envelope() const& { return envelope_; }
  EventEnvelope&& envelope() && { return std::move(envelope_); }

 private:
  explicit ValidatedEvent(EventEnvelope envelope) : envelope_(std::move(envelope)) {}
  friend ValidatedEvent validate(EventEnvelope, std::span<const EventKindSchema>, const Limits&);

  EventEnvelope envelope_;
};

/// Structural and schema checks. Unknown event types pass when well formed.
/// Throws ValidationError.
ValidatedEvent validate(EventEnvelope envelope, std::span<const EventKindSchema> schemas,
                        const Limits& limits = {});

}  // namespace lalog::model
