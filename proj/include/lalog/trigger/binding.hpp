#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lalog::trigger {

enum class TriggerKind { send_mail };

/// A rule attached to an activity: fire `kind` when an event type matches the pattern.
struct TriggerBinding {
  std::string activity_id;
  std::string event_type_pattern;
  TriggerKind kind = TriggerKind::send_mail;
  std::vector<std::pair<std::string, std::string>> params;

  const std::string* param(std::string_view key) const {
    for (const auto& [k, v] : params) {
      if (k == key) return &v;
    }
    return nullptr;
  }

  bool operator==(const TriggerBinding&) const = default;
};

}  // namespace lalog::trigger
