#include "lalog/analytics/renderers.hpp"

#include <stdexcept>

#include "lalog/model/event.hpp"

namespace lalog::analytics {

std::string_view to_string(PayloadShape shape) {
  switch (shape) {
    case PayloadShape::text_line: return "text_line";
    case PayloadShape::question_card: return "question_card";
    case PayloadShape::image_card: return "image_card";
    case PayloadShape::feedback_card: return "feedback_card";
    case PayloadShape::help_request_card: return "help_request_card";
    case PayloadShape::generic_field_table: return "generic_field_table";
  }
  return "generic_field_table";
}

RendererRegistry RendererRegistry::builtin() {
  RendererRegistry r;
  r.add({"text_line", "action", PayloadShape::text_line});
  r.add({"question_card", "question", PayloadShape::question_card});
  r.add({"image_card", "image", PayloadShape::image_card});
  r.add({"feedback_card", "feedback", PayloadShape::feedback_card});
  r.add({"help_request_card", "helprequest", PayloadShape::help_request_card});
  return r;
}

void RendererRegistry::add(RendererDescriptor descriptor) {
  if (!model::is_valid_type_pattern(descriptor.applies_to)) {
    throw std::invalid_argument("invalid renderer pattern: " + descriptor.applies_to);
  }
  descriptors_.push_back(std::move(descriptor));
}

const RendererDescriptor& RendererRegistry::fallback() {
  static const RendererDescriptor kFallback{"generic_field_table", "*", PayloadShape::generic_field_table};
  return kFallback;
}

const RendererDescriptor& RendererRegistry::resolve(std::string_view event_type) const {
  const RendererDescriptor* best = nullptr;
  for (const auto& d : descriptors_) {
    if (!model::match_type(event_type, d.applies_to)) continue;
    if (best == nullptr || d.applies_to.size() > best->applies_to.size()) best = &d;
  }
  return best != nullptr ? *best : fallback();
}

}  // namespace lalog::analytics
