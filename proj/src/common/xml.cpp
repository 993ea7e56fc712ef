#include "lalog/common/xml.hpp"

#include <expat.h>

#include <algorithm>
#include <climits>

namespace lalog::xml {

namespace {

struct Builder {
  XML_Parser parser = nullptr;
  std::vector<Element*> stack;
  Element root;
  bool have_root = false;
  std::string error;
  long error_line = 0;

  void fail(std::string message) {
    if (error.empty()) {
      error = std::move(message);
      error_line = static_cast<long>(XML_GetCurrentLineNumber(parser));
    }
    XML_StopParser(parser, XML_FALSE);
  }
};

void on_start(void* data, const XML_Char* name, const XML_Char** attrs) {
  auto& b = *static_cast<Builder*>(data);
  Element el;
  el.name = name;
  el.line = static_cast<long>(XML_GetCurrentLineNumber(b.parser));
  for (const XML_Char** a = attrs; *a != nullptr; a += 2) el.attributes.emplace_back(a[0], a[1]);
  if (b.stack.empty()) {
    b.root = std::move(el);
    b.have_root = true;
    b.stack.push_back(&b.root);
  } else {
    auto& children = b.stack.back()->children;
    children.push_back(std::move(el));
    b.stack.push_back(&children.back());
  }
}

void on_end(void* data, const XML_Char*) {
  auto& b = *static_cast<Builder*>(data);
  b.stack.pop_back();
}

void on_text(void* data, const XML_Char* s, int len) {
  auto& b = *static_cast<Builder*>(data);
  if (!b.stack.empty()) b.stack.back()->text.append(s, static_cast<std::size_t>(len));
}

void on_doctype(void* data, const XML_Char*, const XML_Char*, const XML_Char*, int) {
  static_cast<Builder*>(data)->fail("DOCTYPE declarations are not accepted");
}

std::size_t utf8_sequence(std::string_view text, std::size_t i, char32_t& cp) {
  const auto c0 = static_cast<unsigned char>(text[i]);
  if (c0 < 0x80) {
    cp = c0;
    return 1;
  }
  std::size_t len = 0;
  char32_t min = 0;
  if ((c0 & 0xE0) == 0xC0) {
    len = 2;
    cp = c0 & 0x1F;
    min = 0x80;
  } else if ((c0 & 0xF0) == 0xE0) {
    len = 3;
    cp = c0 & 0x0F;
    min = 0x800;
  } else if ((c0 & 0xF8) == 0xF0) {
    len = 4;
    cp = c0 & 0x07;
    min = 0x10000;
  } else {
    return 0;
  }
  if (i + len > text.size()) return 0;
  for (std::size_t k = 1; k < len; ++k) {
    const auto c = static_cast<unsigned char>(text[i + k]);
    if ((c & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (c & 0x3F);
  }
  if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return 0;
  return len;
}

}  // namespace

const std::string* Element::attribute(std::string_view key) const {
  auto it = std::find_if(attributes.begin(), attributes.end(), [&](const auto& kv) { return kv.first == key; });
  return it == attributes.end() ? nullptr : &it->second;
}

bool Element::has_significant_text() const {
  return std::any_of(text.begin(), text.end(), [](char c) { return c != ' ' && c != '\t' && c != '\n' && c != '\r'; });
}

Element parse(std::string_view document) {
  if (document.size() > static_cast<std::size_t>(INT_MAX)) throw ParseError("document too large", 0);
  Builder b;
  b.parser = XML_ParserCreate("UTF-8");
  if (b.parser == nullptr) throw std::bad_alloc();
  XML_SetUserData(b.parser, &b);
  XML_SetElementHandler(b.parser, on_start, on_end);
  XML_SetCharacterDataHandler(b.parser, on_text);
  XML_SetStartDoctypeDeclHandler(b.parser, on_doctype);
  const auto status = XML_Parse(b.parser, document.data(), static_cast<int>(document.size()), XML_TRUE);
  if (status != XML_STATUS_OK && b.error.empty()) {
    b.error = XML_ErrorString(XML_GetErrorCode(b.parser));
    b.error_line = static_cast<long>(XML_GetCurrentLineNumber(b.parser));
  }
  XML_ParserFree(b.parser);
  if (!b.error.empty()) throw ParseError(b.error, b.error_line);
  if (!b.have_root) throw ParseError("no root element", 0);
  return std::move(b.root);
}

void append_escaped_text(std::string& out, std::string_view text) {
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '\r': out += "&#13;"; break;
      default: out += c;
    }
  }
}

void append_escaped_attribute(std::string& out, std::string_view text) {
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\t': out += "&#9;"; break;
      case '\n': out += "&#10;"; break;
      case '\r': out += "&#13;"; break;
      default: out += c;
    }
  }
}

bool is_xml_text(std::string_view text) {
  for (std::size_t i = 0; i < text.size();) {
    char32_t cp = 0;
    const std::size_t len = utf8_sequence(text, i, cp);
    if (len == 0) return false;
    const bool allowed = cp == 0x9 || cp == 0xA || cp == 0xD || (cp >= 0x20 && cp <= 0xD7FF) ||
                         (cp >= 0xE000 && cp <= 0xFFFD) || cp >= 0x10000;
    if (!allowed) return false;
    i += len;
  }
  return true;
}

}  // namespace lalog::xml
