#include <string>

#include "attriqe/corpus.hpp"
#include "attriqe/errors.hpp"

namespace attriqe::corpus {

std::string_view op_name(ErrorOp op) noexcept {
  switch (op) {
    case ErrorOp::insert: return "insert";
    case ErrorOp::remove: return "delete";
    case ErrorOp::replace: return "replace";
    case ErrorOp::swap: return "swap";
  }
  return "?";
}

namespace {

struct Slot {
  std::string word;
  Label label = Label::ok;
  bool removed = false;
  std::vector<std::string> inserted_before;
};

const std::string& draw_other(std::span<const std::string> pool, const std::string& avoid, Rng& rng) {
  bool any = false;
  for (const auto& w : pool)
    if (w != avoid) { any = true; break; }
  if (!any) throw ContractError("error pool has no word different from '" + avoid + "'");
  while (true) {
    const auto& w = pool[uniform_index(rng, pool.size())];
    if (w != avoid) return w;
  }
}

}  // namespace

Injection inject_errors(std::span<const std::string> words, double rate, std::span<const std::string> pool,
                        Rng& rng, std::optional<ErrorOp> forced) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ContractError("injection rate must lie in [0,1]");
  if (words.empty()) throw ContractError("cannot inject errors into an empty sentence");

  const std::size_t n = words.size();
  std::vector<Slot> slots(n);
  for (std::size_t i = 0; i < n; ++i) slots[i].word = words[i];

  std::vector<bool> selected(n);
  for (std::size_t i = 0; i < n; ++i) selected[i] = uniform01(rng) < rate;

  Injection out;
  if (rate > 0.0 && pool.empty()) throw ContractError("error injection needs a non-empty word pool");
  for (std::size_t i = 0; i < n; ++i) {
    if (!selected[i]) continue;
    ErrorOp op = forced ? *forced : static_cast<ErrorOp>(uniform_index(rng, 4));
    std::size_t partner = i;
    if (op == ErrorOp::swap) {
      std::vector<std::size_t> candidates;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && !slots[j].removed && slots[j].word != slots[i].word) candidates.push_back(j);
      if (candidates.empty()) {
        op = ErrorOp::replace;
      } else {
        partner = candidates[uniform_index(rng, candidates.size())];
      }
    }
    switch (op) {
      case ErrorOp::replace:
        slots[i].word = draw_other(pool, slots[i].word, rng);
        slots[i].label = Label::bad;
        break;
      case ErrorOp::insert:
        slots[i].inserted_before.push_back(pool[uniform_index(rng, pool.size())]);
        break;
      case ErrorOp::remove:
        slots[i].removed = true;
        break;
      case ErrorOp::swap:
        std::swap(slots[i].word, slots[partner].word);
        slots[i].label = Label::bad;
        slots[partner].label = Label::bad;
        break;
    }
    out.ops.push_back({op, i, partner});
  }

  bool pending_deletion = false;
  std::size_t last_removed = n;
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& w : slots[i].inserted_before) {
      out.words.push_back(w);
      out.labels.push_back(Label::bad);
      pending_deletion = false;
    }
    if (slots[i].removed) {
      pending_deletion = true;
      last_removed = i;
      continue;
    }
    out.words.push_back(slots[i].word);
    out.labels.push_back(pending_deletion ? Label::bad : slots[i].label);
    pending_deletion = false;
  }
  if (out.words.empty()) {
    // Everything was deleted: keep the last deleted word, flagged.
    out.words.push_back(slots[last_removed].word);
    out.labels.push_back(Label::bad);
  } else if (pending_deletion) {
    out.labels.back() = Label::bad;
  }
  for (Label l : out.labels) out.has_error = out.has_error || l == Label::bad;
  return out;
}

}  // namespace attriqe::corpus
