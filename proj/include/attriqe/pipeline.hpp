#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attriqe/attribution.hpp"
#include "attriqe/corpus.hpp"
#include "attriqe/eval.hpp"
#include "attriqe/model.hpp"
#include "attriqe/train.hpp"

namespace attriqe::pipeline {

// The whole run is described by one JSON tree. Missing keys take the values
// of defaults(); flags are applied on top; every stage writes the resolved
// tree next to its outputs so the stage can be replayed from it.
class RunConfig {
 public:
  static nlohmann::json defaults();
  static RunConfig from_json(const nlohmann::json& user);
  static RunConfig load(const std::filesystem::path& path);

  const nlohmann::json& tree() const noexcept { return tree_; }
  nlohmann::json& tree() noexcept { return tree_; }

  void set_seed(std::uint64_t seed) { tree_["seed"] = seed; }
  void set_workers(std::size_t workers) { tree_["workers"] = workers; }
  void set_out(const std::filesystem::path& out) { tree_["paths"]["out"] = out.string(); }

  std::uint64_t seed() const;
  std::size_t workers() const;
  std::filesystem::path out() const;

  // Input locations; default to the matching directory under out().
  std::filesystem::path data_dir() const;
  std::filesystem::path model_dir() const;
  std::filesystem::path word_model_dir() const;
  std::filesystem::path dumps_dir() const;

  ModelConfig model_config() const;
  TrainOptions train_options() const;
  Objective objective() const;
  eval::EvalOptions eval_options() const;
  corpus::ToyOptions toy_options() const;

  // Parses every section; throws ConfigError on the first problem.
  void validate() const;

  std::string snapshot() const;  // pretty-printed tree with input paths resolved

 private:
  nlohmann::json tree_;
};

struct StageOptions {
  bool force = false;  // allow replacing an existing output directory
};

// Each stage returns the directory it wrote.
std::filesystem::path gen_data(const RunConfig& config, const StageOptions& opt = {});
std::filesystem::path train(const RunConfig& config, const StageOptions& opt = {});
std::filesystem::path attribute(const RunConfig& config, const StageOptions& opt = {});
std::filesystem::path evaluate(const RunConfig& config, const std::vector<std::filesystem::path>& dumps = {},
                               const StageOptions& opt = {});
std::filesystem::path sweep(const RunConfig& config, const StageOptions& opt = {});
std::filesystem::path analyze(const RunConfig& config, const StageOptions& opt = {});
std::filesystem::path report(const RunConfig& config, const StageOptions& opt = {});

// ---- building blocks shared with tests ----------------------------------------------

struct Dataset {
  std::vector<corpus::Example> train, dev, test;
  const std::vector<corpus::Example>& split(const std::string& name) const;
};
Dataset load_data(const std::filesystem::path& dir);

// Everything a method run needs besides the model.
struct MethodContext {
  attr::IgOptions ig;
  attr::IbOptions ib;
  attr::LimeOptions lime;
  bool attention_cls_row = false;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  const attr::IbPrior* prior = nullptr;
};

// Attributions for every example and every requested layer, in input order.
// Unlayered methods ignore `layers` and return a single entry keyed by nullopt.
template <typename T>
std::map<std::optional<std::size_t>, std::vector<attr::Attribution>> run_method(
    const QeModel<T>& model, const corpus::Vocabulary& vocab, std::span<const corpus::Example> examples,
    attr::Method method, const std::vector<std::size_t>& layers, const MethodContext& ctx,
    const QeModel<T>* word_model = nullptr);

std::vector<attr::Attribution> run_random(std::span<const corpus::Example> examples, std::uint64_t seed);
std::vector<attr::Attribution> run_glassbox(std::span<const corpus::Example> examples);

MethodContext method_context(const RunConfig& config);
std::vector<std::size_t> layers_for(const RunConfig& config, attr::Method method, std::size_t model_layers);
std::string dump_name(attr::Method method, std::optional<std::size_t> layer);

}  // namespace attriqe::pipeline
