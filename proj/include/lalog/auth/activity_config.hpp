#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lalog/trigger/binding.hpp"

namespace lalog::auth {

/// Registration of one learning tool in one course.
struct ActivityConfig {
  std::string activity_id;
  std::string course_label;
  std::vector<std::uint8_t> application_key;
  /// Exact origins: scheme://host[:port].
  std::vector<std::string> host_whitelist;
  std::vector<std::uint8_t> pseudonym_salt;
  std::vector<std::string> teacher_principals;
  std::vector<trigger::TriggerBinding> trigger_bindings;
  /// Column order of the exercise table; may be empty.
  std::vector<std::string> exercise_order;
};

}  // namespace lalog::auth
