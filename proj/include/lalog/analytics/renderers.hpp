#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lalog::analytics {

enum class PayloadShape { text_line, question_card, image_card, feedback_card, help_request_card, generic_field_table };

std::string_view to_string(PayloadShape shape);

struct RendererDescriptor {
  std::string renderer_id;
  /// Event type pattern: exact token or `prefix.*`.
  std::string applies_to;
  PayloadShape shape = PayloadShape::generic_field_table;
};

/// Maps event types to renderers. The longest matching pattern wins; equal lengths go to
/// the earlier registration; unmatched types fall back to generic_field_table.
class RendererRegistry {
 public:
  /// Renderers for the five built-in event kinds.
  static RendererRegistry builtin();

  /// Throws std::invalid_argument for an invalid pattern.
  void add(RendererDescriptor descriptor);
  const RendererDescriptor& resolve(std::string_view event_type) const;
  const std::vector<RendererDescriptor>& descriptors() const { return descriptors_; }

  static const RendererDescriptor& fallback();

 private:
  std::vector<RendererDescriptor> descriptors_;
};

}  // namespace lalog::analytics
