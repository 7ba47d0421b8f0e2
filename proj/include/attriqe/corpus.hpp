#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "attriqe/encoded_input.hpp"
#include "attriqe/util.hpp"

namespace attriqe::corpus {

enum class Label : std::uint8_t { ok = 0, bad = 1 };

std::string_view label_name(Label label) noexcept;
Label parse_label(std::string_view text);

struct Example {
  std::string id;
  std::vector<std::string> source;
  std::vector<std::string> target;
  std::vector<Label> labels;  // empty when the example carries no word labels
  std::optional<double> da;
  std::optional<double> hter;
  std::optional<std::vector<double>> logprobs;

  bool has_labels() const noexcept { return !labels.empty(); }
  // Binary sentence label: any BAD word (falls back to hter > 0).
  bool has_error() const;

  // Throws DataError on a broken invariant. With strict_hter, an HTER given
  // alongside labels must equal the BAD fraction.
  void validate(bool strict_hter = true) const;

  friend bool operator==(const Example&, const Example&) = default;
};

// BAD count / length.
double hter(std::span<const Label> labels);

// Keeps examples with DA strictly below the threshold, preserving order.
std::vector<Example> filter_by_da(std::span<const Example> examples, double threshold = 70.0);

// ---- vocabulary and tokenization ------------------------------------------

// Token inventory shared by source and target. Ids below special::count are
// reserved. With merges, words are split into byte-pair subwords whose last
// piece carries an end-of-word marker.
class Vocabulary {
 public:
  struct BuildOptions {
    std::size_t bpe_merges = 0;  // 0 = word-level tokens
  };

  Vocabulary();

  static Vocabulary build(std::span<const Example> training, const BuildOptions& options);

  std::size_t size() const noexcept { return tokens_.size(); }
  std::int32_t id(std::string_view token) const;  // unk when absent
  bool contains(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  bool uses_subwords() const noexcept { return !merges_.empty() || subword_mode_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const noexcept { return merges_; }

  std::vector<std::string> split_word(std::string_view word) const;
  std::vector<std::int32_t> encode_word(std::string_view word) const;
  EncodedInput encode(std::span<const std::string> source, std::span<const std::string> target) const;

  // Training-split counts.
  std::uint64_t frequency(std::int32_t id) const;
  std::uint64_t word_frequency(std::string_view word) const;

  std::uint64_t hash() const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::int32_t add_token(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::vector<std::uint64_t> frequencies_;
  std::map<std::string, std::uint64_t, std::less<>> word_frequencies_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, std::size_t> merge_rank_;
  bool subword_mode_ = false;
};

inline constexpr std::string_view kEndOfWord = "</w>";

// Learns up to max_merges byte-pair merges over the given word counts.
// Ties between equally frequent pairs go to the lexicographically smallest.
std::vector<std::pair<std::string, std::string>> learn_bpe(
    const std::map<std::string, std::uint64_t, std::less<>>& word_counts, std::size_t max_merges);

// Word score = maximum over the word's token scores; special positions are
// skipped. Returns one score per word of `side`.
std::vector<double> map_subword_scores_to_words(std::span<const double> scores,
                                                const EncodedInput& input, Side side);

// ---- error injection ------------------------------------------------------

enum class ErrorOp : std::uint8_t { insert = 0, remove = 1, replace = 2, swap = 3 };
std::string_view op_name(ErrorOp op) noexcept;

struct AppliedOp {
  ErrorOp op;
  std::size_t position;  // original word index
  std::size_t partner;   // swap partner, else == position
};

struct Injection {
  std::vector<std::string> words;
  std::vector<Label> labels;
  bool has_error = false;
  std::vector<AppliedOp> ops;
};

// Each original position is selected independently with probability `rate`;
// every selected position gets one operation drawn uniformly (or `forced`).
// Labels: replaced and inserted words are BAD, both swapped words are BAD,
// a deletion marks the next emitted word BAD (the last word when the
// deletion is sentence-final). A swap needs a partner holding a different
// word; without one it degrades to a replacement.
Injection inject_errors(std::span<const std::string> words, double rate,
                        std::span<const std::string> pool, Rng& rng,
                        std::optional<ErrorOp> forced = std::nullopt);

// ---- parallel text and the toy task ----------------------------------------

struct SentencePair {
  std::vector<std::string> source;
  std::vector<std::string> target;
};

// Deterministic template grammar over two invented languages with a fixed
// bilingual lexicon; the target side reorders adjective-noun pairs.
std::vector<SentencePair> generate_synthetic_corpus(std::size_t count, std::uint64_t seed);

// Tab-separated "source<TAB>target" lines.
std::vector<SentencePair> load_parallel_corpus(const std::filesystem::path& path);

struct ToyOptions {
  std::size_t train_size = 10000;
  std::size_t dev_size = 1000;
  std::size_t test_size = 1000;
  double corrupt_fraction = 0.5;
  double rate = 0.1;
  std::uint64_t seed = 13;
};

struct ToyDataset {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
};

ToyDataset generate_toy_dataset(std::span<const SentencePair> corpus, const ToyOptions& options);

// ---- dataset files ----------------------------------------------------------

enum class DatasetFormat { jsonl, tsv };
DatasetFormat parse_format(std::string_view name);

struct LoadOptions {
  bool strict_hter = true;
  bool skip_header = false;     // TSV only
  bool strip_gap_tags = false;  // TSV only: keep word tags out of 2n+1 gap-interleaved tags
};

nlohmann::json example_to_json(const Example& e);
Example example_from_json(const nlohmann::json& j, std::size_t line_no);

std::vector<Example> load_dataset(const std::filesystem::path& path, DatasetFormat format,
                                  const LoadOptions& options = {});
void save_dataset(const std::filesystem::path& path, std::span<const Example> examples,
                  DatasetFormat format);
std::string serialize_jsonl(std::span<const Example> examples);

// Reads a JSONL file of {"id"?, "logprobs": [...]} records aligned to MT words
// and attaches them by id (or by line order when ids are absent).
void attach_logprobs(std::vector<Example>& examples, const std::filesystem::path& path);

}  // namespace attriqe::corpus
