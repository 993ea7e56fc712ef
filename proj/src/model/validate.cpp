#include "lalog/model/validate.hpp"

#include <algorithm>
#include <unordered_set>

#include "lalog/common/xml.hpp"
#include "lalog/wire/codec.hpp"

namespace lalog::model {

namespace {

using Code = ValidationError::Code;

constexpr auto kMinDate = Instant{std::chrono::sys_days{std::chrono::year{0} / 1 / 1}};
constexpr auto kMaxDate = Instant{std::chrono::sys_days{std::chrono::year{10000} / 1 / 1}};

void check_fields(const std::vector<Field>& fields, const Limits& limits) {
  std::unordered_set<std::string_view> seen;
  for (const auto& field : fields) {
    if (!seen.insert(field.name).second) throw ValidationError(Code::duplicate_field, field.name);
    if (!xml::is_xml_text(field.name)) throw ValidationError(Code::wrong_kind, field.name);
    const auto& value = field.value;
    switch (value.kind()) {
      case FieldKind::string:
        if (!xml::is_xml_text(value.as_string())) throw ValidationError(Code::wrong_kind, field.name);
        break;
      case FieldKind::number:
        break;
      case FieldKind::date:
        if (value.as_date() < kMinDate || value.as_date() >= kMaxDate) {
          throw ValidationError(Code::wrong_kind, field.name);
        }
        break;
      case FieldKind::blob: {
        const auto& blob = value.as_blob();
        if (blob.media_type.empty() || !xml::is_xml_text(blob.media_type)) {
          throw ValidationError(Code::wrong_kind, field.name);
        }
        if (blob.bytes.size() > limits.max_blob_bytes) throw ValidationError(Code::oversize, field.name);
        break;
      }
      case FieldKind::kvlist:
        check_fields(value.as_kvlist(), limits);
        break;
    }
  }
}

void check_schema(const EventEnvelope& envelope, const EventKindSchema& schema) {
  for (const auto& required : schema.required_fields) {
    const FieldValue* value = envelope.find(required.name);
    if (value == nullptr) throw ValidationError(Code::missing_field, required.name);
    if (value->kind() != required.kind) throw ValidationError(Code::wrong_kind, required.name);
  }
  for (const auto& optional : schema.optional_fields) {
    const FieldValue* value = envelope.find(optional.name);
    if (value != nullptr && value->kind() != optional.kind) throw ValidationError(Code::wrong_kind, optional.name);
  }
  if (!schema.enum_field.empty()) {
    const FieldValue* value = envelope.find(schema.enum_field);
    if (value != nullptr && value->kind() == FieldKind::string &&
        std::find(schema.enum_values.begin(), schema.enum_values.end(), value->as_string()) ==
            schema.enum_values.end()) {
      throw ValidationError(Code::wrong_kind, schema.enum_field);
    }
  }
}

}  // namespace

ValidationError::ValidationError(Code code, std::string field)
    : std::runtime_error(std::string(to_string(code)) + (field.empty() ? "" : "(" + field + ")")),
      code_(code),
      field_(std::move(field)) {}

std::string_view to_string(ValidationError::Code code) {
  switch (code) {
    case Code::bad_type_token: return "bad_type_token";
    case Code::missing_field: return "missing_field";
    case Code::wrong_kind: return "wrong_kind";
    case Code::oversize: return "oversize";
    case Code::duplicate_field: return "duplicate_field";
  }
  return "unknown";
}

const std::vector<EventKindSchema>& builtin_schemas() {
  static const std::vector<EventKindSchema> schemas = [] {
    std::vector<EventKindSchema> s;
    s.push_back({"action", {{"action_name", FieldKind::string}}, "A user interaction with the tool."});
    s.push_back({"image", {{"image", FieldKind::blob}}, "A rendered picture of the tool state."});
    s.push_back({"question", {{"question_text", FieldKind::string}}, "An exercise question shown to the learner."});
    EventKindSchema feedback{"feedback",
                             {{"verdict", FieldKind::string}, {"message", FieldKind::string}},
                             "Automatic assessment of a submission."};
    feedback.enum_field = "verdict";
    feedback.enum_values = {std::string(kVerdictSuccess), std::string(kVerdictFailure),
                            std::string(kVerdictPartial)};
    s.push_back(std::move(feedback));
    EventKindSchema help{"helprequest",
                         {{"question_text", FieldKind::string}, {"learner_email", FieldKind::string}},
                         "A learner asking a teacher for help."};
    help.optional_fields = {{"snapshot", FieldKind::blob}};
    s.push_back(std::move(help));
    return s;
  }();
  return schemas;
}

ValidatedEvent validate(EventEnvelope envelope, std::span<const EventKindSchema> schemas, const Limits& limits) {
  if (!is_valid_type_token(envelope.event_type)) throw ValidationError(Code::bad_type_token, {});
  if (!xml::is_xml_text(envelope.exercise)) throw ValidationError(Code::wrong_kind, "exercise");
  if (envelope.client_timestamp < kMinDate || envelope.client_timestamp >= kMaxDate) {
    throw ValidationError(Code::wrong_kind, "ts");
  }
  check_fields(envelope.fields, limits);
  auto schema = std::find_if(schemas.begin(), schemas.end(),
                             [&](const EventKindSchema& s) { return s.event_type == envelope.event_type; });
  if (schema != schemas.end()) check_schema(envelope, *schema);
  if (wire::encode(envelope).size() > limits.max_event_bytes) throw ValidationError(Code::oversize, {});
  return ValidatedEvent(std::move(envelope));
}

}  // namespace lalog::model
