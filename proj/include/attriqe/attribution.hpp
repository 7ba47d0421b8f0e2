#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "attriqe/corpus.hpp"
#include "attriqe/model.hpp"

namespace attriqe::attr {

enum class Method { ig, ib, attention, lime, random, glassbox, supervised, external };

std::string_view method_name(Method m) noexcept;
Method parse_method(std::string_view name);
// Methods that attribute to a hidden layer.
bool is_layered(Method m) noexcept;

// One explained example. For token-level methods `raw` has one entry per
// encoded position (specials included); LIME spreads each word coefficient
// over the word's positions. The word-level baselines store their target
// word scores in `raw`. Source and target scores are oriented: higher means
// more likely an error.
struct Attribution {
  std::string id;
  Method method = Method::external;
  std::optional<std::size_t> layer;
  std::vector<double> raw;
  std::vector<double> source_scores;
  std::vector<double> target_scores;
  nlohmann::json meta = nlohmann::json::object();

  void validate() const;  // finite scores; throws NumericError
};

// ---- orientation ----------------------------------------------------------

// Gradient and surrogate methods explain the sentence score itself, so for a
// higher-is-better head a positive contribution means "less likely an error"
// and the sign is flipped. All other methods already rank errors.
bool needs_orientation(Method m) noexcept;
std::vector<double> orient(std::span<const double> raw, Method m, Orientation o);

// Splits oriented positional scores into per-word source and target scores.
void assign_word_scores(Attribution& a, std::span<const double> oriented_positions, const EncodedInput& input);

// ---- integrated gradients --------------------------------------------------

// A differentiable map from hidden states at one layer to the sentence score.
template <typename T>
struct HiddenFunction {
  std::function<T(const ad::Tensor<T>&)> value;
  std::function<std::pair<T, ad::Tensor<T>>(const ad::Tensor<T>&)> gradient;

  static HiddenFunction from_model(const QeModel<T>& model, std::size_t layer);
};

struct IgOptions {
  std::size_t steps = 32;
  bool l2_norm = false;  // reduce hidden dimensions by L2 norm instead of the signed sum
};

struct IgResult {
  std::vector<double> scores;  // per position
  double f_input = 0.0;        // F(H)
  double f_baseline = 0.0;     // F(0)
  double residual = 0.0;       // |sum(signed scores) - (F(H) - F(0))|
};

// Midpoint Riemann sum along the straight path from the zero baseline to H.
template <typename T>
IgResult integrated_gradients_core(const HiddenFunction<T>& f, const ad::Tensor<T>& hidden, const IgOptions& options,
                                   std::size_t layer_for_errors = 0);

template <typename T>
Attribution integrated_gradients(const QeModel<T>& model, const EncodedInput& input, const HiddenTrace<T>& trace,
                                 std::size_t layer, const IgOptions& options);

// ---- information bottleneck --------------------------------------------------

// Per-layer, per-dimension Gaussian prior of hidden activations.
struct IbPrior {
  std::vector<std::vector<double>> mean;    // [layer][d]
  std::vector<std::vector<double>> stddev;  // [layer][d]
  std::size_t sentences = 0;

  bool has_layer(std::size_t l) const noexcept { return l < mean.size() && !mean[l].empty(); }
  nlohmann::json to_json() const;
  static IbPrior from_json(const nlohmann::json& j);
};

template <typename T>
IbPrior estimate_ib_prior(const QeModel<T>& model, std::span<const EncodedInput> inputs);

struct IbOptions {
  double beta = 0.01;
  std::size_t steps = 10;
  double learning_rate = 1.0;
  double init_logit = 5.0;
  std::uint64_t seed = 0;
};

struct IbResult {
  std::vector<double> capacity;   // per position, nats
  std::vector<double> alpha;      // final retain coefficients
  std::vector<double> objective;  // before each step, then after the last one
  double prediction = 0.0;        // F(H)
  double noised_prediction = 0.0; // F(Z) at the final coefficients
};

template <typename T>
IbResult information_bottleneck_core(const QeModel<T>& model, std::size_t layer, const ad::Tensor<T>& hidden,
                                     T target, const IbPrior& prior, const IbOptions& options);

template <typename T>
Attribution information_bottleneck(const QeModel<T>& model, const EncodedInput& input, const HiddenTrace<T>& trace,
                                   std::size_t layer, const IbPrior& prior, const IbOptions& options);

// ---- attention ---------------------------------------------------------------

// Head-averaged attention paid to each position: the column mean over all
// query rows, or just the [CLS] row when `cls_row` is set. `maps` are the
// per-head maps of one layer.
template <typename T>
std::vector<double> attention_scores(std::span<const ad::Tensor<T>> maps, bool cls_row = false);

template <typename T>
Attribution attention_attribution(const EncodedInput& input, const HiddenTrace<T>& trace, std::size_t layer,
                                  bool cls_row = false);

// ---- LIME ------------------------------------------------------------------

struct LimeOptions {
  std::size_t samples = 500;
  double kernel_width = 25.0;
  double ridge = 1.0;
  std::uint64_t seed = 0;
};

struct LimeResult {
  std::vector<double> coefficients;
  double intercept = 0.0;
  double ridge_used = 0.0;
};

// Fits a weighted ridge surrogate of `predict` over random keep-masks of
// `features` features. Sample 0 is the unperturbed input.
LimeResult lime_core(std::size_t features, const std::function<double(const std::vector<bool>&)>& predict,
                     const LimeOptions& options);

// Masks whole source and target words with [MASK].
EncodedInput mask_words(const EncodedInput& input, const std::vector<bool>& keep);

template <typename T>
Attribution lime(const QeModel<T>& model, const EncodedInput& input, const LimeOptions& options);

// ---- word-level baselines ----------------------------------------------------------

Attribution random_scores(const corpus::Example& e, Rng& rng);
Attribution glassbox_scores(const corpus::Example& e);
template <typename T>
Attribution supervised_scores(const QeModel<T>& word_model, const corpus::Vocabulary& vocab,
                              const corpus::Example& e);

// ---- dumps -------------------------------------------------------------------

nlohmann::json to_json(const Attribution& a);
Attribution from_json(const nlohmann::json& j, std::size_t line_no = 0);
std::string serialize_dump(std::span<const Attribution> dump);
void write_dump(const std::filesystem::path& path, std::span<const Attribution> dump);
std::vector<Attribution> read_dump(const std::filesystem::path& path);

}  // namespace attriqe::attr
