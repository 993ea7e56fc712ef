#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lalog::xml {

/// Element tree produced by `parse`. Text between child elements is kept per
/// element as the concatenation of all character data, with a flag recording
/// whether any of it was non-whitespace interleaved with children.
struct Element {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attributes;
  std::vector<Element> children;
  std::string text;
  long line = 0;

  const std::string* attribute(std::string_view key) const;
  bool has_significant_text() const;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long line) : std::runtime_error(what), line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

/// Parses a UTF-8 document. DOCTYPE declarations are rejected.
Element parse(std::string_view document);

/// Escapes `&`, `<`, `>` and `\r` for character data.
void append_escaped_text(std::string& out, std::string_view text);
/// Escapes for a double-quoted attribute value, including tab/newline/CR.
void append_escaped_attribute(std::string& out, std::string_view text);

/// True when every code point is allowed by XML 1.0 and the input is valid UTF-8.
bool is_xml_text(std::string_view text);

}  // namespace lalog::xml
