#include <cmath>
#include <filesystem>
#include <map>

#include <gtest/gtest.h>

#include "attriqe/corpus.hpp"
#include "attriqe/errors.hpp"

namespace attriqe::corpus {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("attriqe_corpus_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Example make(std::string id, std::string src, std::string mt, std::vector<Label> labels = {}) {
  Example e;
  e.id = std::move(id);
  e.source = split_whitespace(src);
  e.target = split_whitespace(mt);
  e.labels = std::move(labels);
  return e;
}

// ---- vocabulary ----------------------------------------------------------------

TEST(Vocabulary, WordModeOrdersByFrequency) {
  const std::vector<Example> train = {make("a", "x y", "b a a"), make("b", "x", "a c")};
  const auto v = Vocabulary::build(train, {});
  EXPECT_EQ(v.token(special::count), "a");  // three occurrences
  EXPECT_EQ(v.token(special::count + 1), "x");
  EXPECT_EQ(v.frequency(v.id("a")), 3u);
  EXPECT_EQ(v.word_frequency("x"), 2u);
  EXPECT_EQ(v.id("never"), special::unk);
  EXPECT_FALSE(v.uses_subwords());
}

TEST(Vocabulary, EncodeLayoutAndSpans) {
  const std::vector<Example> train = {make("a", "p q", "r s t")};
  const auto v = Vocabulary::build(train, {});
  const std::vector<std::string> src = {"p", "q"}, tgt = {"r", "zz", "t"};
  const auto in = v.encode(src, tgt);
  in.validate();
  ASSERT_EQ(in.size(), 8u);
  EXPECT_EQ(in.ids[0], special::cls);
  EXPECT_EQ(in.ids[3], special::sep);
  EXPECT_EQ(in.ids[5], special::unk);
  EXPECT_EQ(in.ids[7], special::sep);
  EXPECT_EQ(in.segments[4], Segment::target);
  EXPECT_EQ(in.spans[6], (WordRef{Side::target, 2}));
  EXPECT_FALSE(in.spans[3].has_value());
}

TEST(Vocabulary, HandBpeMerges) {
  // Words split as "l o w</w>" x5 and "l o w e r</w>" x2. (l,o) and (o,w) both
  // occur 7 times and the lexicographically smaller pair wins. Then
  // (lo,w</w>) occurs 5 times; after it (lo,w), (w,e) and (e,r</w>) tie at 2.
  const std::map<std::string, std::uint64_t, std::less<>> counts = {{"low", 5}, {"lower", 2}};
  const auto merges = learn_bpe(counts, 3);
  ASSERT_EQ(merges.size(), 3u);
  EXPECT_EQ(merges[0], (std::pair<std::string, std::string>{"l", "o"}));
  EXPECT_EQ(merges[1], (std::pair<std::string, std::string>{"lo", "w</w>"}));
  EXPECT_EQ(merges[2], (std::pair<std::string, std::string>{"e", "r</w>"}));
}

TEST(Vocabulary, BpeStopsWhenNoPairRepeats) {
  const std::map<std::string, std::uint64_t, std::less<>> counts = {{"ab", 1}, {"cd", 1}};
  EXPECT_TRUE(learn_bpe(counts, 10).empty());
}

TEST(Vocabulary, SubwordSplitAndWordScores) {
  std::vector<Example> train;
  for (int i = 0; i < 4; ++i) train.push_back(make("t" + std::to_string(i), "lower low", "newer new"));
  const auto v = Vocabulary::build(train, {.bpe_merges = 6});
  EXPECT_TRUE(v.uses_subwords());
  std::string joined;
  for (const auto& piece : v.split_word("lowest")) joined += piece;
  EXPECT_EQ(joined, std::string("lowest") + std::string(kEndOfWord));

  const std::vector<std::string> src = {"lowest"}, tgt = {"newest", "new"};
  const auto in = v.encode(src, tgt);
  in.validate();
  std::vector<double> scores(in.size());
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = static_cast<double>(i);
  const auto words = map_subword_scores_to_words(scores, in, Side::target);
  ASSERT_EQ(words.size(), 2u);
  // Max over each word's pieces: the last piece of a word has the largest index.
  std::size_t last_first = 0, last_second = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in.spans[i] == WordRef{Side::target, 0}) last_first = i;
    if (in.spans[i] == WordRef{Side::target, 1}) last_second = i;
  }
  EXPECT_DOUBLE_EQ(words[0], static_cast<double>(last_first));
  EXPECT_DOUBLE_EQ(words[1], static_cast<double>(last_second));
}

TEST(Vocabulary, JsonRoundTripAndHash) {
  std::vector<Example> train = {make("a", "lower low", "newer new"), make("b", "low", "new")};
  const auto v = Vocabulary::build(train, {.bpe_merges = 4});
  const auto w = Vocabulary::from_json(v.to_json());
  EXPECT_EQ(v.hash(), w.hash());
  EXPECT_EQ(v.size(), w.size());
  auto broken = v.to_json();
  broken["tokens"][6] = "tampered";
  EXPECT_THROW(Vocabulary::from_json(broken), Error);
}

// ---- examples ------------------------------------------------------------------

TEST(Example, ValidateCatchesBrokenInvariants) {
  auto e = make("x", "a b", "c d", {Label::ok});
  EXPECT_THROW(e.validate(), DataError);
  e.labels = {Label::ok, Label::bad};
  e.hter = 0.5;
  EXPECT_NO_THROW(e.validate());
  e.hter = 0.25;
  EXPECT_THROW(e.validate(true), DataError);
  EXPECT_NO_THROW(e.validate(false));
  EXPECT_TRUE(e.has_error());
}

TEST(Example, FilterByDaIsStrict) {
  std::vector<Example> v = {make("a", "x", "y"), make("b", "x", "y"), make("c", "x", "y")};
  v[0].da = 69.9;
  v[1].da = 70.0;
  v[2].da = 10.0;
  const auto kept = filter_by_da(v, 70.0);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].id, "a");
  EXPECT_EQ(kept[1].id, "c");
}

// ---- error injection -------------------------------------------------------------

using Outcome = std::pair<std::vector<std::string>, std::vector<Label>>;

// Independent enumeration of the injection process over every branch:
// selection per slot, operation, swap partner and replacement/insertion word.
struct Enumerator {
  std::vector<std::string> words;
  std::vector<std::string> pool;
  double rate;
  std::optional<ErrorOp> forced;
  std::map<Outcome, double> dist;

  struct State {
    std::vector<std::string> word;
    std::vector<Label> label;
    std::vector<bool> removed;
    std::vector<std::vector<std::string>> before;
  };

  void run() {
    State s{words, std::vector<Label>(words.size(), Label::ok), std::vector<bool>(words.size(), false),
            std::vector<std::vector<std::string>>(words.size())};
    select(s, 0, std::vector<bool>(words.size()), 1.0);
  }

  // Selection draws come first for every slot, then operations in slot order.
  void select(State& s, std::size_t i, std::vector<bool> chosen, double p) {
    if (i == words.size()) return apply(s, chosen, 0, p);
    chosen[i] = false;
    select(s, i + 1, chosen, p * (1.0 - rate));
    chosen[i] = true;
    select(s, i + 1, chosen, p * rate);
  }

  void apply(State s, const std::vector<bool>& chosen, std::size_t i, double p) {
    if (p == 0.0) return;
    if (i == words.size()) return emit(s, p);
    if (!chosen[i]) return apply(s, chosen, i + 1, p);
    std::vector<std::pair<ErrorOp, double>> ops;
    if (forced) ops.push_back({*forced, 1.0});
    else for (int k = 0; k < 4; ++k) ops.push_back({static_cast<ErrorOp>(k), 0.25});
    for (auto [op, q] : ops) {
      if (op == ErrorOp::swap) {
        std::vector<std::size_t> cand;
        for (std::size_t j = 0; j < words.size(); ++j)
          if (j != i && !s.removed[j] && s.word[j] != s.word[i]) cand.push_back(j);
        if (!cand.empty()) {
          for (std::size_t j : cand) {
            State t = s;
            std::swap(t.word[i], t.word[j]);
            t.label[i] = t.label[j] = Label::bad;
            apply(t, chosen, i + 1, p * q / static_cast<double>(cand.size()));
          }
          continue;
        }
        op = ErrorOp::replace;
      }
      if (op == ErrorOp::replace) {
        std::size_t others = 0;
        for (const auto& w : pool) others += w != s.word[i];
        for (const auto& w : pool) {
          if (w == s.word[i]) continue;
          State t = s;
          t.word[i] = w;
          t.label[i] = Label::bad;
          apply(t, chosen, i + 1, p * q / static_cast<double>(others));
        }
      } else if (op == ErrorOp::insert) {
        for (const auto& w : pool) {
          State t = s;
          t.before[i].push_back(w);
          apply(t, chosen, i + 1, p * q / static_cast<double>(pool.size()));
        }
      } else {
        State t = s;
        t.removed[i] = true;
        apply(t, chosen, i + 1, p * q);
      }
    }
  }

  // A deletion marks the next emitted word; the last word when it is final.
  void emit(const State& s, double p) {
    Outcome o;
    bool pending = false;
    std::size_t last_removed = 0;
    for (std::size_t i = 0; i < words.size(); ++i) {
      for (const auto& w : s.before[i]) {
        o.first.push_back(w);
        o.second.push_back(Label::bad);
        pending = false;
      }
      if (s.removed[i]) {
        pending = true;
        last_removed = i;
        continue;
      }
      o.first.push_back(s.word[i]);
      o.second.push_back(pending ? Label::bad : s.label[i]);
      pending = false;
    }
    if (o.first.empty()) {
      o.first.push_back(s.word[last_removed]);
      o.second.push_back(Label::bad);
    } else if (pending) {
      o.second.back() = Label::bad;
    }
    dist[o] += p;
  }
};

void compare_with_enumeration(Enumerator en, std::uint64_t seed) {
  en.run();
  double mass = 0.0;
  for (const auto& [o, p] : en.dist) mass += p;
  ASSERT_NEAR(mass, 1.0, 1e-12);

  constexpr int kTrials = 60000;
  std::map<Outcome, int> counts;
  Rng rng(seed);
  for (int t = 0; t < kTrials; ++t) {
    const auto r = inject_errors(en.words, en.rate, en.pool, rng, en.forced);
    std::vector<Label> labels = r.labels;
    bool has = false;
    for (Label l : labels) has = has || l == Label::bad;
    EXPECT_EQ(has, r.has_error);
    ++counts[{r.words, labels}];
  }
  for (const auto& [o, c] : counts) {
    ASSERT_TRUE(en.dist.count(o)) << "injector produced an outcome the enumeration says is impossible";
  }
  for (const auto& [o, p] : en.dist) {
    const double f = static_cast<double>(counts[o]) / kTrials;
    const double sd = std::sqrt(p * (1.0 - p) / kTrials);
    EXPECT_LE(std::abs(f - p), 5.0 * sd + 1e-4) << "outcome frequency " << f << " vs exact " << p;
  }
}

TEST(Inject, MatchesExactEnumerationForEachForcedOp) {
  for (int k = 0; k < 4; ++k) {
    Enumerator en{{"a", "b", "a"}, {"a", "b", "c"}, 0.4, static_cast<ErrorOp>(k), {}};
    compare_with_enumeration(en, 100 + k);
  }
}

TEST(Inject, MatchesExactEnumerationForMixedOps) {
  Enumerator en{{"a", "b", "c"}, {"a", "d"}, 0.35, std::nullopt, {}};
  compare_with_enumeration(en, 7);
  Enumerator same{{"x", "x"}, {"x", "y"}, 0.6, std::nullopt, {}};  // swap has no partner here
  compare_with_enumeration(same, 8);
}

TEST(Inject, HandExamples) {
  const std::vector<std::string> words = {"w1", "w2", "w3"}, pool = {"p"};
  Rng rng(1);
  // Deleting everything keeps the last word, flagged.
  auto all = inject_errors(words, 1.0, pool, rng, ErrorOp::remove);
  EXPECT_EQ(all.words, (std::vector<std::string>{"w3"}));
  EXPECT_EQ(all.labels, (std::vector<Label>{Label::bad}));
  // Inserting before every word: foreign words BAD, originals untouched.
  auto ins = inject_errors(words, 1.0, pool, rng, ErrorOp::insert);
  EXPECT_EQ(ins.words, (std::vector<std::string>{"p", "w1", "p", "w2", "p", "w3"}));
  EXPECT_EQ(ins.labels, (std::vector<Label>{Label::bad, Label::ok, Label::bad, Label::ok, Label::bad, Label::ok}));
  // Rate zero leaves the sentence alone.
  auto none = inject_errors(words, 0.0, pool, rng);
  EXPECT_EQ(none.words, words);
  EXPECT_FALSE(none.has_error);
}

TEST(Inject, RejectsBadArguments) {
  Rng rng(1);
  const std::vector<std::string> words = {"a"}, empty;
  EXPECT_THROW(inject_errors(words, 1.5, words, rng), ContractError);
  EXPECT_THROW(inject_errors(empty, 0.1, words, rng), ContractError);
  EXPECT_THROW(inject_errors(words, 0.1, empty, rng), ContractError);
  // Replacing "a" with a pool that only holds "a" is impossible.
  EXPECT_THROW(inject_errors(words, 1.0, words, rng, ErrorOp::replace), ContractError);
}

// ---- synthetic task -------------------------------------------------------------

TEST(Synthetic, DeterministicAndReordersAdjectives) {
  const auto a = generate_synthetic_corpus(200, 3), b = generate_synthetic_corpus(200, 3);
  ASSERT_EQ(a.size(), 200u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].source, b[i].source);
    EXPECT_EQ(a[i].target, b[i].target);
    EXPECT_EQ(a[i].source.size(), a[i].target.size());
  }
  EXPECT_NE(generate_synthetic_corpus(5, 4)[0].source, a[0].source);
}

TEST(Synthetic, ToyDatasetSplitsAndLabels) {
  const auto pairs = generate_synthetic_corpus(600, 11);
  ToyOptions o;
  o.train_size = 400;
  o.dev_size = 100;
  o.test_size = 100;
  o.seed = 5;
  const auto ds = generate_toy_dataset(pairs, o);
  ASSERT_EQ(ds.train.size(), 400u);
  ASSERT_EQ(ds.dev.size(), 100u);
  std::size_t corrupted = 0;
  for (const auto& e : ds.dev) {
    e.validate();
    corrupted += e.has_error();
    EXPECT_NEAR(*e.da, 100.0 * (1.0 - *e.hter), 1e-9);
  }
  EXPECT_EQ(corrupted, 50u);
  EXPECT_EQ(ds.dev[0].id.rfind("dev-", 0), 0u);

  const auto again = generate_toy_dataset(pairs, o);
  EXPECT_EQ(ds.test, again.test);
  o.train_size = 600;
  EXPECT_THROW(generate_toy_dataset(pairs, o), LengthError);
}

// ---- files ----------------------------------------------------------------------

TEST(DatasetIo, JsonlRoundTrip) {
  const auto pairs = generate_synthetic_corpus(40, 2);
  ToyOptions o;
  o.train_size = 20;
  o.dev_size = 10;
  o.test_size = 10;
  const auto ds = generate_toy_dataset(pairs, o);
  const fs::path dir = scratch_dir("jsonl");
  save_dataset(dir / "train.jsonl", ds.train, DatasetFormat::jsonl);
  EXPECT_EQ(load_dataset(dir / "train.jsonl", DatasetFormat::jsonl), ds.train);
}

TEST(DatasetIo, TsvWithGapTagsAndHeader) {
  const fs::path dir = scratch_dir("tsv");
  write_file(dir / "d.tsv",
             "src\tmt\tda\thter\ttags\n"
             "a b\tx y\t55.5\t0.5\tOK OK OK BAD OK\n"
             "c\tz\t90\t0\tOK\n");
  LoadOptions lo;
  lo.skip_header = true;
  lo.strip_gap_tags = true;
  const auto rows = load_dataset(dir / "d.tsv", DatasetFormat::tsv, lo);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].labels, (std::vector<Label>{Label::ok, Label::bad}));
  EXPECT_DOUBLE_EQ(*rows[0].da, 55.5);
  EXPECT_EQ(rows[1].labels, (std::vector<Label>{Label::ok}));
  EXPECT_EQ(filter_by_da(rows, 70.0).size(), 1u);

  write_file(dir / "bad.tsv", "a\tb\tnot-a-number\t0\tOK\n");
  EXPECT_THROW(load_dataset(dir / "bad.tsv", DatasetFormat::tsv), Error);
}

TEST(DatasetIo, AttachLogprobs) {
  const fs::path dir = scratch_dir("lp");
  std::vector<Example> v = {make("s1", "a", "x y"), make("s2", "b", "z")};
  write_file(dir / "lp.jsonl", "{\"id\":\"s2\",\"logprobs\":[-0.5]}\n{\"id\":\"s1\",\"logprobs\":[-1,-2]}\n");
  attach_logprobs(v, dir / "lp.jsonl");
  EXPECT_EQ(*v[0].logprobs, (std::vector<double>{-1.0, -2.0}));
  write_file(dir / "short.jsonl", "{\"id\":\"s1\",\"logprobs\":[-1]}\n{\"id\":\"s2\",\"logprobs\":[-0.5]}\n");
  EXPECT_THROW(attach_logprobs(v, dir / "short.jsonl"), Error);
}

TEST(DatasetIo, MissingFileIsAPathError) {
  EXPECT_THROW(load_dataset("/nonexistent/x.jsonl", DatasetFormat::jsonl), PathError);
}

}  // namespace
}  // namespace attriqe::corpus
