#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "lalog/model/event.hpp"

// Canonical XML wire format for EventEnvelope (see docs/wire-format.md).
namespace lalog::wire {

class DecodeError : public std::runtime_error {
 public:
  enum class Code { malformed_xml, unknown_kind, bad_timestamp, bad_base64, bad_number, duplicate_field };

  DecodeError(Code code, std::string detail);

  Code code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Code code_;
  std::string detail_;
};

std::string_view to_string(DecodeError::Code code);

/// Canonical, deterministic encoding. The envelope must be valid.
std::string encode(const model::EventEnvelope& envelope);

/// Parses any document in the grammar, regardless of attribute order or
/// whitespace between elements. Throws DecodeError; never returns a partial result.
model::EventEnvelope decode(std::string_view document);

/// Shortest decimal that reads back to the same double.
std::string format_number(double value);

}  // namespace lalog::wire
