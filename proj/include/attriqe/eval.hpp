#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "attriqe/attribution.hpp"
#include "attriqe/corpus.hpp"
#include "attriqe/metrics.hpp"

namespace attriqe::eval {

// Which gold sentences are eligible before the both-classes exclusion.
enum class Protocol { has_error, da_below };

std::string_view protocol_name(Protocol p) noexcept;
Protocol parse_protocol(std::string_view name);

struct EvalOptions {
  Protocol protocol = Protocol::has_error;
  double da_threshold = 70.0;
};

struct MetricRow {
  std::string method;
  std::optional<std::size_t> layer;
  std::string protocol;
  double auc = 0.0;
  double ap = 0.0;
  double acc_top1 = 0.0;
  double rec_topk = 0.0;
  std::size_t total = 0;
  std::size_t evaluated = 0;
  std::size_t excluded_all_ok = 0;
  std::size_t excluded_all_bad = 0;
  std::size_t filtered_protocol = 0;  // removed by the protocol filter

  nlohmann::json to_json() const;
};

struct EvalReport {
  std::vector<MetricRow> rows;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// Scores one method/layer: the dump must cover the gold set one-to-one by id.
MetricRow evaluate(std::span<const attr::Attribution> dump, std::span<const corpus::Example> gold,
                   const EvalOptions& options);

// Splits a mixed dump by (method, layer), in order of first appearance.
EvalReport evaluate_all(std::span<const attr::Attribution> dump, std::span<const corpus::Example> gold,
                        const EvalOptions& options);

// Argmax of dev AUC over the rows; ties go to the deeper layer.
std::size_t select_layer(std::span<const MetricRow> per_layer_dev);

// Preflight for a protocol: throws ConfigError when the gold data cannot support it.
void check_protocol(std::span<const corpus::Example> gold, const EvalOptions& options);

// ---- analyses ----------------------------------------------------------------

struct CategoryRow {
  std::optional<std::size_t> layer;
  double source = 0.0;
  double target_ok = 0.0;
  std::optional<double> target_bad;  // absent when no BAD words exist
  std::size_t source_words = 0, ok_words = 0, bad_words = 0;
};

// Mean per-sentence z-scored attribution of source words, OK target words and
// BAD target words. Each sentence is standardized over its source and target
// word scores together; constant sentences contribute zeros.
CategoryRow category_attribution(std::span<const attr::Attribution> dump, std::span<const corpus::Example> gold);

struct FrequencyRow {
  std::optional<std::size_t> layer;
  std::string side;    // "source" | "target"
  std::string bucket;  // "low" | "high" predicted quality
  std::size_t sentences = 0;
  double top_frequency = 0.0;   // mean training frequency of the top-attributed word
  double mean_frequency = 0.0;  // mean training frequency of all words in the bucket
  double gap = 0.0;             // top_frequency - mean_frequency
};

struct FrequencyOptions {
  double low_percentile = 0.25;
  double high_percentile = 0.75;
};

// Buckets sentences by the predicted quality recorded in the dump (oriented
// so that higher is better), strictly below the low and strictly above the
// high percentile. Throws BucketError when a bucket is empty.
std::vector<FrequencyRow> frequency_contrast(std::span<const attr::Attribution> dump,
                                             std::span<const corpus::Example> gold,
                                             const corpus::Vocabulary& vocab, Orientation orientation,
                                             const FrequencyOptions& options = {});

// Linear-interpolation percentile, q in [0,1].
double percentile(std::vector<double> values, double q);

std::string category_csv(std::span<const CategoryRow> rows);
std::string frequency_csv(std::span<const FrequencyRow> rows);

}  // namespace attriqe::eval
