#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "attriqe/checkpoint.hpp"
#include "attriqe/corpus.hpp"
#include "attriqe/encoded_input.hpp"
#include "attriqe/graph.hpp"
#include "attriqe/util.hpp"

namespace attriqe {

enum class HeadKind { regression, binary, token };
enum class Orientation { higher_is_better, higher_is_worse };
enum class Activation { gelu, relu };

std::string_view head_kind_name(HeadKind k) noexcept;
HeadKind parse_head_kind(std::string_view name);
std::string_view orientation_name(Orientation o) noexcept;
Orientation parse_orientation(std::string_view name);

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ff = 128;
  std::size_t vocab_size = 0;  // filled in from the vocabulary
  std::size_t max_len = 128;
  HeadKind head = HeadKind::binary;
  double dropout = 0.1;
  Orientation orientation = Orientation::higher_is_worse;
  Activation activation = Activation::gelu;
  bool segment_embeddings = true;
  bool segment_positions = true;  // target positions restart after the first [SEP]
  double ln_epsilon = 1e-5;
  double init_std = 0.02;

  // Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

template <typename T>
struct HiddenTrace {
  std::vector<ad::Tensor<T>> hidden;                  // H_0 .. H_L, each n x d
  std::vector<std::vector<ad::Tensor<T>>> attention;  // [layer 1..L][head], each n x n
  T prediction{};                                     // sentence heads only
  std::vector<T> token_probabilities;                 // token head only, one per position
};

// Transformer encoder over [CLS] src [SEP] tgt [SEP]. The parameters are
// never modified by inference; any number of threads may call the const
// members concurrently.
template <typename T>
class QeModel {
 public:
  QeModel() = default;
  QeModel(ModelConfig config, ad::ParameterSet<T> params);

  static QeModel initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  const ad::ParameterSet<T>& parameters() const noexcept { return params_; }
  ad::ParameterSet<T>& mutable_parameters() noexcept { return params_; }

  // Parameters bound into one graph.
  struct Bound {
    std::vector<ad::Var<T>> p;
  };
  Bound bind(ad::Graph<T>& g, bool requires_grad) const;

  // Dropout is applied when `dropout_rng` is non-null.
  struct ForwardOptions {
    Rng* dropout_rng = nullptr;
    HiddenTrace<T>* trace = nullptr;
  };

  // Embedding output H_0.
  ad::Var<T> embed(const Bound& b, const EncodedInput& input, Rng* dropout_rng = nullptr) const;
  // Runs layer `layer` (1-based) on its input states.
  ad::Var<T> block(const Bound& b, std::size_t layer, ad::Var<T> x, Rng* dropout_rng = nullptr,
                   std::vector<ad::Tensor<T>>* attention = nullptr) const;
  // Head logits: [1] for sentence heads, [n] for the token head.
  ad::Var<T> head_logits(const Bound& b, ad::Var<T> top) const;
  // Applies the output link (identity for regression, sigmoid otherwise).
  ad::Var<T> link(ad::Var<T> logits) const;

  // Full forward pass returning head logits.
  ad::Var<T> forward_logits(const Bound& b, const EncodedInput& input, const ForwardOptions& opt) const;
  // Layers l+1..L plus head and link, starting from states at layer l.
  ad::Var<T> forward_from(const Bound& b, std::size_t layer, ad::Var<T> hidden) const;

  void check_input(const EncodedInput& input) const;

  HiddenTrace<T> encode_and_predict(const EncodedInput& input) const;
  T predict_from_hidden(std::size_t layer, const ad::Tensor<T>& hidden) const;
  // Sentence prediction and its gradient with respect to the layer-l states.
  std::pair<T, ad::Tensor<T>> gradient_from_hidden(std::size_t layer, const ad::Tensor<T>& hidden) const;

  // Sentence prediction for a batch of inputs; no gradients, no trace.
  T predict(const EncodedInput& input) const;

 private:
  std::size_t param_index(std::size_t layer, std::size_t slot) const { return 5 + (layer - 1) * 12 + slot; }
  std::size_t head_index(std::size_t slot) const { return 5 + config_.layers * 12 + slot; }
  void check_hidden(std::size_t layer, const ad::Tensor<T>& hidden) const;

  ModelConfig config_;
  ad::ParameterSet<T> params_;
};

// Pearson correlation; throws NumericError on zero variance or length < 2.
double pearson(std::span<const double> x, std::span<const double> y);

// A saved model is a directory: model.ckpt, model.json (config, vocab hash,
// orientation), vocab.json.
template <typename T>
void save_model(const std::filesystem::path& dir, const QeModel<T>& model, const corpus::Vocabulary& vocab,
                const nlohmann::json& extra = {});

template <typename T>
struct LoadedModel {
  QeModel<T> model;
  corpus::Vocabulary vocab;
  nlohmann::json meta;
};

template <typename T>
LoadedModel<T> load_model(const std::filesystem::path& dir);

}  // namespace attriqe
