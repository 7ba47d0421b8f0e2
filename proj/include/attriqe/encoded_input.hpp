#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace attriqe {

// Reserved ids, shared by every vocabulary.
namespace special {
inline constexpr std::int32_t pad = 0;
inline constexpr std::int32_t unk = 1;
inline constexpr std::int32_t cls = 2;
inline constexpr std::int32_t sep = 3;
inline constexpr std::int32_t mask = 4;
inline constexpr std::int32_t count = 5;
}  // namespace special

enum class Segment : std::uint8_t { special = 0, source = 1, target = 2 };
enum class Side : std::uint8_t { source = 0, target = 1 };

struct WordRef {
  Side side = Side::source;
  std::size_t word = 0;
  friend bool operator==(const WordRef&, const WordRef&) = default;
};

// [CLS] source [SEP] target [SEP], with a span map from every non-special
// position back to the word it came from.
struct EncodedInput {
  std::vector<std::int32_t> ids;
  std::vector<Segment> segments;
  std::vector<std::optional<WordRef>> spans;
  std::size_t source_words = 0;
  std::size_t target_words = 0;

  std::size_t size() const noexcept { return ids.size(); }

  // Throws ContractError when the layout invariants do not hold.
  void validate() const;
};

}  // namespace attriqe
