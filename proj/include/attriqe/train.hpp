#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "attriqe/corpus.hpp"
#include "attriqe/model.hpp"

namespace attriqe {

// What the sentence head is trained to predict.
//   da:     DA / 100, regression, higher is better
//   hter:   HTER, regression, higher is worse
//   binary: has-error probability, higher is worse
enum class Objective { da, hter, binary };

std::string_view objective_name(Objective o) noexcept;
Objective parse_objective(std::string_view name);
HeadKind head_for(Objective o) noexcept;
Orientation orientation_for(Objective o) noexcept;

struct TrainOptions {
  std::size_t max_epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 3e-4;
  double warmup_fraction = 0.05;
  double grad_clip = 1.0;
  std::size_t patience = 3;  // dev evaluations without improvement
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 1;
  std::optional<std::filesystem::path> log_path;  // JSONL training log

  nlohmann::json to_json() const;
  static TrainOptions from_json(const nlohmann::json& j);
};

template <typename T>
struct TrainResult {
  QeModel<T> model;  // best checkpoint by dev metric
  std::string metric_name;
  double best_metric = 0.0;
  std::size_t best_epoch = 0;
  std::vector<nlohmann::json> log;
};

// Sentence-level training. `config.head` and `config.orientation` are set
// from the objective.
template <typename T>
TrainResult<T> train_sentence_model(ModelConfig config, const corpus::Vocabulary& vocab,
                                    std::span<const corpus::Example> train, std::span<const corpus::Example> dev,
                                    Objective objective, const TrainOptions& options);

// Token classifier: per-position BAD probability over target tokens.
template <typename T>
TrainResult<T> train_word_model(ModelConfig config, const corpus::Vocabulary& vocab,
                                std::span<const corpus::Example> train, std::span<const corpus::Example> dev,
                                const TrainOptions& options);

// Sentence target for an objective; throws DataError when it is missing.
double sentence_target(const corpus::Example& e, Objective objective);

// Per-word BAD probabilities (max over the word's target tokens).
template <typename T>
std::vector<double> word_bad_probabilities(const QeModel<T>& model, const corpus::Vocabulary& vocab,
                                           const corpus::Example& e);

}  // namespace attriqe
