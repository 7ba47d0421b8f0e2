#include <cmath>
#include <string>

#include "attriqe/corpus.hpp"
#include "attriqe/errors.hpp"

namespace attriqe {

void EncodedInput::validate() const {
  const std::size_t n = ids.size();
  if (segments.size() != n || spans.size() != n) {
    throw ContractError("encoded input: ids, segments and spans differ in length");
  }
  if (n == 0 || ids[0] != special::cls) throw ContractError("encoded input: position 0 must be [CLS]");
  std::vector<bool> seen_src(source_words, false), seen_tgt(target_words, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && ids[i] == special::cls) throw ContractError("encoded input: more than one [CLS]");
    const bool is_special = segments[i] == Segment::special;
    if (is_special != !spans[i].has_value()) {
      throw ContractError("encoded input: special positions must have no span and vice versa");
    }
    if (!spans[i]) continue;
    const WordRef& w = *spans[i];
    auto& seen = w.side == Side::source ? seen_src : seen_tgt;
    const Segment expected = w.side == Side::source ? Segment::source : Segment::target;
    if (segments[i] != expected || w.word >= seen.size()) {
      throw ContractError("encoded input: span at position " + std::to_string(i) + " is inconsistent");
    }
    seen[w.word] = true;
  }
  for (bool s : seen_src)
    if (!s) throw ContractError("encoded input: a source word has no token");
  for (bool s : seen_tgt)
    if (!s) throw ContractError("encoded input: a target word has no token");
}

namespace corpus {

std::string_view label_name(Label label) noexcept { return label == Label::bad ? "BAD" : "OK"; }

Label parse_label(std::string_view text) {
  if (text == "OK") return Label::ok;
  if (text == "BAD") return Label::bad;
  throw DataError("unknown word label '" + std::string(text) + "' (expected OK or BAD)");
}

double hter(std::span<const Label> labels) {
  if (labels.empty()) throw ContractError("hter of an empty label sequence");
  std::size_t bad = 0;
  for (Label l : labels) bad += l == Label::bad;
  return static_cast<double>(bad) / static_cast<double>(labels.size());
}

bool Example::has_error() const {
  if (!labels.empty()) {
    for (Label l : labels)
      if (l == Label::bad) return true;
    return false;
  }
  if (hter) return *hter > 0.0;
  throw DataError("example '" + id + "' has neither labels nor HTER");
}

void Example::validate(bool strict_hter) const {
  if (!labels.empty() && labels.size() != target.size()) {
    throw DataError("example '" + id + "': " + std::to_string(target.size()) + " target words but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (logprobs && logprobs->size() != target.size()) {
    throw DataError("example '" + id + "': " + std::to_string(target.size()) + " target words but " +
                    std::to_string(logprobs->size()) + " log-probabilities");
  }
  if (da && !std::isfinite(*da)) throw DataError("example '" + id + "': DA is not finite");
  if (hter) {
    if (!(*hter >= 0.0 && *hter <= 1.0)) throw DataError("example '" + id + "': HTER outside [0,1]");
    if (strict_hter && !labels.empty() && std::abs(*hter - corpus::hter(labels)) > 1e-9) {
      throw DataError("example '" + id + "': HTER does not match the BAD-label fraction");
    }
  }
}

std::vector<Example> filter_by_da(std::span<const Example> examples, double threshold) {
  std::vector<Example> out;
  for (const auto& e : examples) {
    if (!e.da) throw DataError("example '" + e.id + "' has no DA score");
    if (*e.da < threshold) out.push_back(e);
  }
  return out;
}

}  // namespace corpus
}  // namespace attriqe
