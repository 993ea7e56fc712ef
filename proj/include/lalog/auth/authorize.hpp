#pragma once

#include <optional>
#include <string>
#include <variant>

#include "lalog/auth/activity_config.hpp"
#include "lalog/model/event.hpp"

namespace lalog::auth {

enum class Role { teacher, learner_self, denied };

std::string_view to_string(Role role);

/// A principal whose identity token has already been verified.
struct VerifiedPrincipal {
  std::string email;
};

/// The bearer of a session token (the session id).
struct SessionToken {
  model::SessionId session_id;
};

using Viewer = std::variant<VerifiedPrincipal, SessionToken>;

/// What is being viewed: a whole activity, or one session inside it.
struct ResourceRef {
  std::string activity_id;
  std::optional<model::SessionId> session_id;
};

/// Teacher rights are scoped to the configured activity; a session token only
/// opens its own session.
Role authorize(const Viewer& viewer, const ActivityConfig& cfg, const ResourceRef& resource);

}  // namespace lalog::auth
