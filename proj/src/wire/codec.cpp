#include "lalog/wire/codec.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <unordered_set>

#include "lalog/common/crypto.hpp"
#include "lalog/common/xml.hpp"

namespace lalog::wire {

namespace {

using model::EventEnvelope;
using model::Field;
using model::FieldKind;
using model::FieldValue;
using Code = DecodeError::Code;

constexpr int kMaxNesting = 32;

void encode_fields(std::string& out, const std::vector<Field>& fields);

void encode_field(std::string& out, const Field& field) {
  const auto kind = field.value.kind();
  out += "<field name=\"";
  xml::append_escaped_attribute(out, field.name);
  out += "\" kind=\"";
  out += model::to_string(kind);
  out += '"';
  if (kind == FieldKind::blob) {
    out += " media=\"";
    xml::append_escaped_attribute(out, field.value.as_blob().media_type);
    out += '"';
  }
  out += '>';
  switch (kind) {
    case FieldKind::string: xml::append_escaped_text(out, field.value.as_string()); break;
    case FieldKind::number: out += format_number(field.value.as_number()); break;
    case FieldKind::date: out += format_iso8601(field.value.as_date()); break;
    case FieldKind::blob: out += crypto::to_base64(field.value.as_blob().bytes); break;
    case FieldKind::kvlist: encode_fields(out, field.value.as_kvlist()); break;
  }
  out += "</field>";
}

void encode_fields(std::string& out, const std::vector<Field>& fields) {
  for (const auto& field : fields) encode_field(out, field);
}

std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n";
  const auto first = s.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  return s.substr(first, s.find_last_not_of(ws) - first + 1);
}

void require_only(const xml::Element& el, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, value] : el.attributes) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw DecodeError(Code::malformed_xml, "unexpected attribute '" + key + "' on <" + el.name + ">");
  }
}

const std::string& require_attribute(const xml::Element& el, std::string_view key) {
  const std::string* value = el.attribute(key);
  if (value == nullptr) {
    throw DecodeError(Code::malformed_xml, "missing attribute '" + std::string(key) + "' on <" + el.name + ">");
  }
  return *value;
}

std::vector<Field> decode_fields(const xml::Element& parent, int depth);

Field decode_field(const xml::Element& el, int depth) {
  if (el.name != "field") throw DecodeError(Code::malformed_xml, "unexpected element <" + el.name + ">");
  require_only(el, {"name", "kind", "media"});
  const std::string& name = require_attribute(el, "name");
  const std::string& kind_text = require_attribute(el, "kind");
  const auto kind = model::field_kind_from_string(kind_text);
  if (!kind) throw DecodeError(Code::unknown_kind, kind_text);
  const std::string* media = el.attribute("media");
  if ((media != nullptr) != (*kind == FieldKind::blob)) {
    throw DecodeError(Code::malformed_xml, "attribute 'media' belongs to blob fields only");
  }
  if (*kind != FieldKind::kvlist && !el.children.empty()) {
    throw DecodeError(Code::malformed_xml, "field '" + name + "' of kind " + kind_text + " has child elements");
  }

  switch (*kind) {
    case FieldKind::string:
      return {name, FieldValue::string(el.text)};
    case FieldKind::number: {
      const auto text = trim(el.text);
      double value = 0;
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
      if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
        throw DecodeError(Code::bad_number, name);
      }
      return {name, FieldValue::number(value)};
    }
    case FieldKind::date: {
      const auto value = parse_iso8601(trim(el.text));
      if (!value) throw DecodeError(Code::bad_timestamp, name);
      return {name, FieldValue::date(*value)};
    }
    case FieldKind::blob: {
      auto bytes = crypto::from_base64(trim(el.text));
      if (!bytes) throw DecodeError(Code::bad_base64, name);
      return {name, FieldValue::blob(*media, std::move(*bytes))};
    }
    case FieldKind::kvlist:
      if (depth >= kMaxNesting) throw DecodeError(Code::malformed_xml, "kvlist nesting too deep");
      if (el.has_significant_text()) throw DecodeError(Code::malformed_xml, "text inside kvlist '" + name + "'");
      return {name, FieldValue::kvlist(decode_fields(el, depth + 1))};
  }
  throw DecodeError(Code::unknown_kind, kind_text);
}

std::vector<Field> decode_fields(const xml::Element& parent, int depth) {
  std::vector<Field> fields;
  fields.reserve(parent.children.size());
  std::unordered_set<std::string> names;
  for (const auto& child : parent.children) {
    Field field = decode_field(child, depth);
    if (!names.insert(field.name).second) throw DecodeError(Code::duplicate_field, field.name);
    fields.push_back(std::move(field));
  }
  return fields;
}

}  // namespace

DecodeError::DecodeError(Code code, std::string detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(std::move(detail)) {}

std::string_view to_string(DecodeError::Code code) {
  switch (code) {
    case Code::malformed_xml: return "malformed_xml";
    case Code::unknown_kind: return "unknown_kind";
    case Code::bad_timestamp: return "bad_timestamp";
    case Code::bad_base64: return "bad_base64";
    case Code::bad_number: return "bad_number";
    case Code::duplicate_field: return "duplicate_field";
  }
  return "unknown";
}

std::string format_number(double value) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ptr);
}

std::string encode(const EventEnvelope& envelope) {
  std::string out;
  out.reserve(128);
  out += "<event type=\"";
  xml::append_escaped_attribute(out, envelope.event_type);
  out += "\" ts=\"";
  out += format_iso8601(envelope.client_timestamp);
  out += "\" exercise=\"";
  xml::append_escaped_attribute(out, envelope.exercise);
  out += "\">";
  encode_fields(out, envelope.fields);
  out += "</event>";
  return out;
}

EventEnvelope decode(std::string_view document) {
  xml::Element root;
  try {
    root = xml::parse(document);
  } catch (const xml::ParseError& e) {
    throw DecodeError(Code::malformed_xml, std::string(e.what()) + " at line " + std::to_string(e.line()));
  }
  if (root.name != "event") throw DecodeError(Code::malformed_xml, "root element must be <event>");
  require_only(root, {"type", "ts", "exercise"});
  if (root.has_significant_text()) throw DecodeError(Code::malformed_xml, "text directly inside <event>");

  EventEnvelope envelope;
  envelope.event_type = require_attribute(root, "type");
  const auto ts = parse_iso8601(require_attribute(root, "ts"));
  if (!ts) throw DecodeError(Code::bad_timestamp, "ts");
  envelope.client_timestamp = *ts;
  if (const std::string* exercise = root.attribute("exercise")) envelope.exercise = *exercise;
  envelope.fields = decode_fields(root, 1);
  return envelope;
}

}  // namespace lalog::wire
