#include "lalog/auth/authorize.hpp"

#include <algorithm>

namespace lalog::auth {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::teacher: return "teacher";
    case Role::learner_self: return "learner_self";
    case Role::denied: return "denied";
  }
  return "denied";
}

Role authorize(const Viewer& viewer, const ActivityConfig& cfg, const ResourceRef& resource) {
  if (resource.activity_id != cfg.activity_id) return Role::denied;
  if (const auto* principal = std::get_if<VerifiedPrincipal>(&viewer)) {
    const auto& teachers = cfg.teacher_principals;
    return std::find(teachers.begin(), teachers.end(), principal->email) != teachers.end() ? Role::teacher
                                                                                            : Role::denied;
  }
  const auto& token = std::get<SessionToken>(viewer);
  if (resource.session_id && *resource.session_id == token.session_id) return Role::learner_self;
  return Role::denied;
}

}  // namespace lalog::auth
