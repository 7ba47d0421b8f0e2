#include "attriqe/tensor.hpp"

namespace attriqe::ad {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::string_view precision_tag(Precision p) noexcept {
  return p == Precision::f32 ? "f32" : "f64";
}

Precision parse_precision(std::string_view tag) {
  if (tag == "f32" || tag == "float32" || tag == "32") return Precision::f32;
  if (tag == "f64" || tag == "float64" || tag == "64") return Precision::f64;
  throw ConfigError("unknown precision tag '" + std::string(tag) + "'");
}

}  // namespace attriqe::ad
