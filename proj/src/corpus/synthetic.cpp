#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "attriqe/corpus.hpp"
#include "attriqe/errors.hpp"

namespace attriqe::corpus {
namespace {

enum Pos { det, noun, adj, verb, prep, adv, pos_count };
constexpr std::size_t kLexiconSize[pos_count] = {4, 60, 30, 40, 8, 12};
constexpr std::uint64_t kLexiconSeed = 0x5eed1e71c0ULL;

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

char pick(std::string_view set, Rng& rng) { return set[uniform_index(rng, set.size())]; }

// Source words are open syllables (CV CV ...), target words closed ones (CVC ...),
// so no surface form is shared between the two languages.
std::string source_form(Rng& rng) {
  std::string w;
  const std::size_t syllables = 2 + uniform_index(rng, 2);
  for (std::size_t s = 0; s < syllables; ++s) {
    w += pick(kConsonants, rng);
    w += pick(kVowels, rng);
  }
  return w;
}

std::string target_form(Rng& rng) {
  std::string w;
  const std::size_t syllables = 1 + uniform_index(rng, 2);
  for (std::size_t s = 0; s < syllables; ++s) {
    w += pick(kConsonants, rng);
    w += pick(kVowels, rng);
    w += pick(kConsonants, rng);
  }
  return w;
}

struct Lexicon {
  std::vector<std::pair<std::string, std::string>> entries[pos_count];
  std::vector<double> cumulative[pos_count];

  Lexicon() {
    Rng rng(kLexiconSeed);
    std::set<std::string> used;
    for (int p = 0; p < pos_count; ++p) {
      double total = 0.0;
      for (std::size_t r = 0; r < kLexiconSize[p]; ++r) {
        std::string s, t;
        do s = source_form(rng);
        while (!used.insert(s).second);
        do t = target_form(rng);
        while (!used.insert(t).second);
        entries[p].emplace_back(std::move(s), std::move(t));
        total += 1.0 / static_cast<double>(r + 1);
        cumulative[p].push_back(total);
      }
      for (auto& c : cumulative[p]) c /= total;
    }
  }

  const std::pair<std::string, std::string>& draw(Pos p, Rng& rng) const {
    const double u = uniform01(rng);
    const auto& cum = cumulative[p];
    const auto it = std::upper_bound(cum.begin(), cum.end(), u);
    const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), cum.size() - 1);
    return entries[p][idx];
  }
};

const Lexicon& lexicon() {
  static const Lexicon lex;
  return lex;
}

struct Builder {
  const Lexicon& lex;
  Rng& rng;
  SentencePair out;

  void word(Pos p) {
    const auto& [s, t] = lex.draw(p, rng);
    out.source.push_back(s);
    out.target.push_back(t);
  }

  // Source: DET ADJ NOUN, target: DET NOUN ADJ.
  void noun_phrase(bool allow_adj = true) {
    word(det);
    const bool with_adj = allow_adj && uniform01(rng) < 0.5;
    if (!with_adj) {
      word(noun);
      return;
    }
    const auto& a = lex.draw(adj, rng);
    const auto& n = lex.draw(noun, rng);
    out.source.push_back(a.first);
    out.source.push_back(n.first);
    out.target.push_back(n.second);
    out.target.push_back(a.second);
  }

  void verb_phrase() {
    if (uniform01(rng) < 0.3) word(adv);
    word(verb);
  }
};

}  // namespace

std::vector<SentencePair> generate_synthetic_corpus(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SentencePair> corpus;
  corpus.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Builder b{lexicon(), rng, {}};
    switch (uniform_index(rng, 4)) {
      case 0:  // NP VP
        b.noun_phrase();
        b.verb_phrase();
        break;
      case 1:  // NP VP NP
        b.noun_phrase();
        b.verb_phrase();
        b.noun_phrase();
        break;
      case 2:  // NP VP PREP NP
        b.noun_phrase();
        b.verb_phrase();
        b.word(prep);
        b.noun_phrase();
        break;
      default:  // NP VP NP PREP NP, kept short
        b.noun_phrase(false);
        b.verb_phrase();
        b.noun_phrase();
        b.word(prep);
        b.noun_phrase(false);
        break;
    }
    corpus.push_back(std::move(b.out));
  }
  return corpus;
}

std::vector<SentencePair> load_parallel_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PathError("cannot open parallel corpus '" + path.string() + "'");
  std::vector<SentencePair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected source<TAB>target");
    }
    SentencePair p{split_whitespace(std::string_view(line).substr(0, tab)),
                   split_whitespace(std::string_view(line).substr(tab + 1))};
    if (p.source.empty() || p.target.empty()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": empty side");
    }
    out.push_back(std::move(p));
  }
  return out;
}

ToyDataset generate_toy_dataset(std::span<const SentencePair> corpus, const ToyOptions& options) {
  const std::size_t needed = options.train_size + options.dev_size + options.test_size;
  if (corpus.size() < needed) {
    throw LengthError("toy dataset needs " + std::to_string(needed) + " sentence pairs, corpus has " +
                      std::to_string(corpus.size()));
  }
  if (!(options.corrupt_fraction >= 0.0 && options.corrupt_fraction <= 1.0)) {
    throw ContractError("corrupt fraction must lie in [0,1]");
  }
  if (options.corrupt_fraction > 0.0 && !(options.rate > 0.0)) {
    throw ContractError("corrupting sentences needs a positive injection rate");
  }

  std::set<std::string> pool_set;
  for (const auto& p : corpus) pool_set.insert(p.target.begin(), p.target.end());
  const std::vector<std::string> pool(pool_set.begin(), pool_set.end());

  Rng rng(options.seed);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

  ToyDataset out;
  const std::pair<std::vector<Example>*, std::size_t> splits[] = {
      {&out.train, options.train_size}, {&out.dev, options.dev_size}, {&out.test, options.test_size}};
  const char* names[] = {"train", "dev", "test"};
  std::size_t offset = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    auto& [dst, size] = splits[s];
    const auto corrupt_count = static_cast<std::size_t>(std::llround(options.corrupt_fraction * size));
    std::vector<std::size_t> slots(size);
    for (std::size_t i = 0; i < size; ++i) slots[i] = i;
    for (std::size_t i = size; i > 1; --i) std::swap(slots[i - 1], slots[uniform_index(rng, i)]);
    std::vector<bool> corrupt(size, false);
    for (std::size_t i = 0; i < corrupt_count; ++i) corrupt[slots[i]] = true;

    dst->reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
      const SentencePair& pair = corpus[order[offset + i]];
      Example e;
      char id[32];
      std::snprintf(id, sizeof id, "%s-%06zu", names[s], i);
      e.id = id;
      e.source = pair.source;
      if (corrupt[i]) {
        Rng local(derive_seed(options.seed, s + 1, i));
        // Redraw until at least one position was hit, so the sentence really is corrupted.
        Injection inj;
        do inj = inject_errors(pair.target, options.rate, pool, local);
        while (!inj.has_error);
        e.target = std::move(inj.words);
        e.labels = std::move(inj.labels);
      } else {
        e.target = pair.target;
        e.labels.assign(pair.target.size(), Label::ok);
      }
      e.hter = hter(e.labels);
      e.da = 100.0 * (1.0 - *e.hter);
      dst->push_back(std::move(e));
    }
    offset += size;
  }
  return out;
}

}  // namespace attriqe::corpus
