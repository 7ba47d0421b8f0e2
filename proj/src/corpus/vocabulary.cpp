#include <algorithm>
#include <limits>
#include <set>

#include "attriqe/corpus.hpp"
#include "attriqe/errors.hpp"

namespace attriqe::corpus {
namespace {

constexpr std::size_t kMaxMerges = 4000;

// Splits a UTF-8 string into code points (invalid bytes become single units).
std::vector<std::string> code_points(std::string_view word) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < word.size();) {
    const auto c = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    len = std::min(len, word.size() - i);
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> initial_symbols(std::string_view word) {
  auto symbols = code_points(word);
  if (!symbols.empty()) symbols.back() += kEndOfWord;
  return symbols;
}

void apply_merge(std::vector<std::string>& symbols, const std::string& a, const std::string& b) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
      out.push_back(a + b);
      ++i;
    } else {
      out.push_back(symbols[i]);
    }
  }
  symbols = std::move(out);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> learn_bpe(
    const std::map<std::string, std::uint64_t, std::less<>>& word_counts, std::size_t max_merges) {
  std::vector<std::pair<std::vector<std::string>, std::uint64_t>> words;
  for (const auto& [w, c] : word_counts) words.emplace_back(initial_symbols(w), c);
  std::vector<std::pair<std::string, std::string>> merges;
  max_merges = std::min(max_merges, kMaxMerges);
  while (merges.size() < max_merges) {
    std::map<std::pair<std::string, std::string>, std::uint64_t> pairs;
    for (const auto& [symbols, count] : words)
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) pairs[{symbols[i], symbols[i + 1]}] += count;
    const std::pair<std::string, std::string>* best = nullptr;
    std::uint64_t best_count = 0;
    for (const auto& [pair, count] : pairs) {
      if (count > best_count) {  // map order makes ties resolve to the smallest pair
        best = &pair;
        best_count = count;
      }
    }
    if (!best || best_count < 2) break;
    const auto merge = *best;
    for (auto& [symbols, count] : words) apply_merge(symbols, merge.first, merge.second);
    merges.push_back(merge);
  }
  return merges;
}

Vocabulary::Vocabulary() {
  for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"}) add_token(s);
}

std::int32_t Vocabulary::add_token(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const auto id = static_cast<std::int32_t>(tokens_.size());
  tokens_.push_back(token);
  frequencies_.push_back(0);
  index_.emplace(token, id);
  return id;
}

Vocabulary Vocabulary::build(std::span<const Example> training, const BuildOptions& options) {
  Vocabulary v;
  for (const auto& e : training) {
    for (const auto& w : e.source) ++v.word_frequencies_[w];
    for (const auto& w : e.target) ++v.word_frequencies_[w];
  }
  if (options.bpe_merges > 0) {
    v.subword_mode_ = true;
    v.merges_ = learn_bpe(v.word_frequencies_, options.bpe_merges);
    for (std::size_t i = 0; i < v.merges_.size(); ++i)
      v.merge_rank_.emplace(v.merges_[i].first + '\x1f' + v.merges_[i].second, i);
    std::set<std::string> symbols;
    for (const auto& [w, c] : v.word_frequencies_)
      for (const auto& s : initial_symbols(w)) symbols.insert(s);
    for (const auto& s : symbols) v.add_token(s);
    for (const auto& [a, b] : v.merges_) v.add_token(a + b);
  } else {
    // Most frequent words get the smallest ids.
    std::vector<std::pair<std::string, std::uint64_t>> words(v.word_frequencies_.begin(),
                                                             v.word_frequencies_.end());
    std::stable_sort(words.begin(), words.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [w, c] : words) v.add_token(w);
  }
  for (const auto& e : training) {
    for (const auto* side : {&e.source, &e.target})
      for (const auto& w : *side)
        for (auto id : v.encode_word(w)) ++v.frequencies_[static_cast<std::size_t>(id)];
  }
  return v;
}

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? special::unk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocabulary::split_word(std::string_view word) const {
  if (!subword_mode_) return {std::string(word)};
  auto symbols = initial_symbols(word);
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max(), best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find(symbols[i] + '\x1f' + symbols[i + 1]);
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_pos = i;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    apply_merge(symbols, merges_[best_rank].first, merges_[best_rank].second);
    (void)best_pos;
  }
  return symbols;
}

std::vector<std::int32_t> Vocabulary::encode_word(std::string_view word) const {
  std::vector<std::int32_t> out;
  for (const auto& piece : split_word(word)) out.push_back(id(piece));
  return out;
}

EncodedInput Vocabulary::encode(std::span<const std::string> source,
                                std::span<const std::string> target) const {
  EncodedInput in;
  in.source_words = source.size();
  in.target_words = target.size();
  auto push_special = [&](std::int32_t id) {
    in.ids.push_back(id);
    in.segments.push_back(Segment::special);
    in.spans.emplace_back(std::nullopt);
  };
  auto push_side = [&](std::span<const std::string> words, Side side) {
    const Segment seg = side == Side::source ? Segment::source : Segment::target;
    for (std::size_t w = 0; w < words.size(); ++w) {
      for (auto id : encode_word(words[w])) {
        in.ids.push_back(id);
        in.segments.push_back(seg);
        in.spans.emplace_back(WordRef{side, w});
      }
    }
  };
  push_special(special::cls);
  push_side(source, Side::source);
  push_special(special::sep);
  push_side(target, Side::target);
  push_special(special::sep);
  return in;
}

std::uint64_t Vocabulary::frequency(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= frequencies_.size()) return 0;
  return frequencies_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::word_frequency(std::string_view word) const {
  auto it = word_frequencies_.find(word);
  return it == word_frequencies_.end() ? 0 : it->second;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a(subword_mode_ ? "subword" : "word");
  for (const auto& t : tokens_) h = fnv1a(t + '\n', h);
  for (const auto& [a, b] : merges_) h = fnv1a(a + ' ' + b + '\n', h);
  return h;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j;
  j["subword"] = subword_mode_;
  j["tokens"] = tokens_;
  j["frequencies"] = frequencies_;
  j["merges"] = nlohmann::json::array();
  for (const auto& [a, b] : merges_) j["merges"].push_back({a, b});
  j["word_frequencies"] = nlohmann::json::object();
  for (const auto& [w, c] : word_frequencies_) j["word_frequencies"][w] = c;
  j["hash"] = hex64(hash());
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  try {
    Vocabulary v;
    v.tokens_.clear();
    v.index_.clear();
    v.frequencies_.clear();
    v.subword_mode_ = j.at("subword").get<bool>();
    const auto tokens = j.at("tokens").get<std::vector<std::string>>();
    const auto freqs = j.at("frequencies").get<std::vector<std::uint64_t>>();
    if (tokens.size() != freqs.size() || tokens.size() < static_cast<std::size_t>(special::count)) {
      throw DataError("vocabulary: token and frequency lists disagree");
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (v.add_token(tokens[i]) != static_cast<std::int32_t>(i)) {
        throw DataError("vocabulary: duplicate token '" + tokens[i] + "'");
      }
      v.frequencies_[i] = freqs[i];
    }
    for (const auto& m : j.at("merges")) {
      v.merges_.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
      v.merge_rank_.emplace(v.merges_.back().first + '\x1f' + v.merges_.back().second, v.merges_.size() - 1);
    }
    for (const auto& [w, c] : j.at("word_frequencies").items()) v.word_frequencies_[w] = c.get<std::uint64_t>();
    if (j.contains("hash") && j["hash"].get<std::string>() != hex64(v.hash())) {
      throw DataError("vocabulary: stored hash does not match its contents");
    }
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("vocabulary: ") + e.what());
  }
}

void Vocabulary::save(const std::filesystem::path& path) const { write_file(path, to_json().dump() + "\n"); }

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("vocabulary '" + path.string() + "': " + e.what());
  }
}

std::vector<double> map_subword_scores_to_words(std::span<const double> scores, const EncodedInput& input,
                                                Side side) {
  if (scores.size() != input.size()) {
    throw DimensionError("map_subword_scores_to_words: " + std::to_string(scores.size()) +
                         " scores for " + std::to_string(input.size()) + " positions");
  }
  const std::size_t n_words = side == Side::source ? input.source_words : input.target_words;
  std::vector<double> out(n_words, -std::numeric_limits<double>::infinity());
  std::vector<bool> covered(n_words, false);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!input.spans[i] || input.spans[i]->side != side) continue;
    const std::size_t w = input.spans[i]->word;
    if (w >= n_words) throw ContractError("span map refers to a word outside the sentence");
    out[w] = covered[w] ? std::max(out[w], scores[i]) : scores[i];
    covered[w] = true;
  }
  for (std::size_t w = 0; w < n_words; ++w) {
    if (!covered[w]) throw ContractError("word " + std::to_string(w) + " is not covered by the span map");
  }
  return out;
}

}  // namespace attriqe::corpus
