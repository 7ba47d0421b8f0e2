#include "attriqe/errors.hpp"

namespace attriqe {

std::string_view category_name(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::dimension: return "dimension";
    case ErrorCategory::contract: return "contract";
    case ErrorCategory::state: return "state";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::data: return "data";
    case ErrorCategory::parse: return "parse";
    case ErrorCategory::config: return "config";
    case ErrorCategory::path: return "path";
    case ErrorCategory::alignment: return "alignment";
    case ErrorCategory::vocabulary: return "vocabulary";
    case ErrorCategory::length: return "length";
    case ErrorCategory::bucket: return "bucket";
    case ErrorCategory::divergence: return "divergence";
  }
  return "unknown";
}

int exit_code(ErrorCategory category) noexcept {
  return 10 + static_cast<int>(category);
}

}  // namespace attriqe
