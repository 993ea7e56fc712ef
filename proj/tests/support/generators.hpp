#pragma once

// Random value generators shared by the property tests.

#include <bit>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lalog/model/event.hpp"

namespace lalog::testing {

class EnvelopeGenerator {
 public:
  explicit EnvelopeGenerator(std::uint64_t seed) : rng_(seed) {}

  std::mt19937_64& rng() { return rng_; }

  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }

  std::string token() {
    static constexpr std::string_view first = "abcdefghijklmnopqrstuvwxyz";
    static constexpr std::string_view rest = "abcdefghijklmnopqrstuvwxyz0123456789_";
    std::string out;
    const int segments = uniform(1, 3);
    for (int s = 0; s < segments; ++s) {
      if (s > 0) out += '.';
      out += first[static_cast<std::size_t>(uniform(0, 25))];
      const int len = uniform(0, 6);
      for (int i = 0; i < len; ++i) out += rest[static_cast<std::size_t>(uniform(0, 36))];
    }
    return out;
  }

  /// Text drawn from ASCII, XML metacharacters, whitespace and multi-byte UTF-8.
  std::string text(int max_len = 24) {
    static const std::vector<std::string> pieces = {
        "a", "Z", "7", " ", "&", "<", ">", "\"", "'", "\t", "\n", "\r", "]]>", "\xC3\xA4", "\xE2\x88\x80",
        "\xF0\x9D\x94\xB8", "x", "domain", "P1", ";", "=", "&amp;"};
    std::string out;
    const int len = uniform(0, max_len);
    for (int i = 0; i < len; ++i) out += pieces[static_cast<std::size_t>(uniform(0, static_cast<int>(pieces.size()) - 1))];
    return out;
  }

  Instant instant() {
    // 1970 .. 2100
    return from_unix_millis(std::uniform_int_distribution<std::int64_t>(0, 4102444800000LL)(rng_));
  }

  double number() {
    switch (uniform(0, 4)) {
      case 0: return static_cast<double>(uniform(-1000, 1000));
      case 1: return std::uniform_real_distribution<double>(-1e6, 1e6)(rng_);
      case 2: return std::ldexp(std::uniform_real_distribution<double>(0.5, 1.0)(rng_), uniform(-1000, 1000));
      case 3: return coin() ? -0.0 : 0.0;
      default: {
        std::uint64_t bits = rng_();
        double d = std::bit_cast<double>(bits);
        return std::isfinite(d) ? d : 1.5;
      }
    }
  }

  model::FieldValue value(int depth) {
    const int kind = uniform(0, depth < 3 ? 4 : 3);
    switch (kind) {
      case 0: return model::FieldValue::string(text());
      case 1: return model::FieldValue::number(number());
      case 2: return model::FieldValue::date(instant());
      case 3: {
        std::vector<std::uint8_t> bytes(static_cast<std::size_t>(uniform(0, 40)));
        for (auto& b : bytes) b = static_cast<std::uint8_t>(uniform(0, 255));
        return model::FieldValue::blob(coin() ? "image/png" : "application/octet-stream", std::move(bytes));
      }
      default: return model::FieldValue::kvlist(fields(depth + 1, 4));
    }
  }

  std::vector<model::Field> fields(int depth, int max_count) {
    std::vector<model::Field> out;
    const int count = uniform(0, max_count);
    for (int i = 0; i < count; ++i) {
      // Index suffix keeps names unique within one list.
      out.push_back({text(6) + "#" + std::to_string(i), value(depth)});
    }
    return out;
  }

  model::EventEnvelope envelope() {
    model::EventEnvelope e;
    e.event_type = token();
    e.client_timestamp = instant();
    e.exercise = coin(0.3) ? std::string{} : text(10);
    e.fields = fields(1, 6);
    return e;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace lalog::testing
