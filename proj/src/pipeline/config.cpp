#include <set>

#include "attriqe/errors.hpp"
#include "attriqe/pipeline.hpp"

namespace attriqe::pipeline {

using nlohmann::json;

json RunConfig::defaults() {
  json model = ModelConfig{}.to_json();
  model.erase("vocab_size");
  model.erase("head");
  model.erase("orientation");
  json training = TrainOptions{}.to_json();
  training.erase("seed");
  training["objective"] = "binary";
  training["word_model"] = false;
  return {
      {"seed", 13},
      {"workers", 1},
      {"precision", "f32"},
      {"paths",
       {{"out", "runs/toy"},
        {"corpus", nullptr},
        {"data_dir", nullptr},
        {"model_dir", nullptr},
        {"word_model_dir", nullptr},
        {"dumps_dir", nullptr}}},
      {"data",
       {{"source", "synthetic"},
        {"format", "jsonl"},
        {"synthetic_pairs", 20000},
        {"train_size", 10000},
        {"dev_size", 1000},
        {"test_size", 1000},
        {"corrupt_fraction", 0.5},
        {"rate", 0.1},
        {"bpe_merges", 0},
        {"strict_hter", true},
        {"skip_header", false},
        {"strip_gap_tags", false},
        {"files", {{"train", nullptr}, {"dev", nullptr}, {"test", nullptr}}},
        {"logprobs", {{"train", nullptr}, {"dev", nullptr}, {"test", nullptr}}}}},
      {"model", model},
      {"training", training},
      {"attribution",
       {{"split", "test"},
        {"limit", nullptr},
        {"methods", {"ig", "attention", "random"}},
        {"layers", "all"},
        {"precision", "f32"},
        {"ig", {{"steps", 32}, {"reduction", "sum"}}},
        {"ib", {{"beta", 0.01}, {"steps", 10}, {"learning_rate", 1.0}, {"init_logit", 5.0}, {"prior_sentences", 256}}},
        {"attention", {{"queries", "all"}}},
        {"lime", {{"samples", 500}, {"kernel_width", 25.0}, {"ridge", 1.0}}}}},
      {"sweep", {{"methods", {"ig"}}, {"dev_limit", nullptr}, {"test_limit", nullptr}}},
      {"analysis",
       {{"method", "ig"}, {"split", "test"}, {"limit", nullptr}, {"low_percentile", 0.25}, {"high_percentile", 0.75}}},
      {"evaluation", {{"protocol", "has_error"}, {"da_threshold", 70.0}, {"split", "test"}}},
  };
}

namespace {

// Rejects keys that the defaults do not know, so typos fail loudly.
void check_keys(const json& user, const json& reference, const std::string& where) {
  if (!user.is_object()) return;
  for (const auto& [key, value] : user.items()) {
    if (!reference.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
    const json& ref = reference[key];
    if (ref.is_object() && !ref.empty()) {
      if (!value.is_object()) throw ConfigError("config key '" + where + key + "' must be an object");
      check_keys(value, ref, where + key + ".");
    }
  }
}

template <typename V>
V get(const json& tree, const json::json_pointer& p) {
  try {
    return tree.at(p).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("config value '" + p.to_string() + "': " + e.what());
  }
}

std::filesystem::path input_path(const json& tree, const char* key, const std::filesystem::path& fallback) {
  const json& v = tree["paths"][key];
  if (v.is_null()) return fallback;
  return std::filesystem::path(v.get<std::string>());
}

}  // namespace

RunConfig RunConfig::from_json(const json& user) {
  if (!user.is_object()) throw ConfigError("the config file must hold a JSON object");
  check_keys(user, defaults(), "");
  RunConfig c;
  c.tree_ = defaults();
  c.tree_.merge_patch(user);
  // merge_patch drops explicit nulls; put the documented null defaults back.
  const json d = defaults();
  for (const char* section : {"paths"})
    for (const auto& [k, v] : d[section].items())
      if (!c.tree_[section].contains(k)) c.tree_[section][k] = v;
  for (const char* k : {"limit"})
    if (!c.tree_["attribution"].contains(k)) c.tree_["attribution"][k] = nullptr;
  for (const char* k : {"dev_limit", "test_limit"})
    if (!c.tree_["sweep"].contains(k)) c.tree_["sweep"][k] = nullptr;
  if (!c.tree_["analysis"].contains("limit")) c.tree_["analysis"]["limit"] = nullptr;
  for (const char* group : {"files", "logprobs"})
    for (const char* s : {"train", "dev", "test"})
      if (!c.tree_["data"][group].contains(s)) c.tree_["data"][group][s] = nullptr;
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return from_json(j);
}

std::uint64_t RunConfig::seed() const { return get<std::uint64_t>(tree_, "/seed"_json_pointer); }

std::size_t RunConfig::workers() const {
  const auto w = get<std::size_t>(tree_, "/workers"_json_pointer);
  if (w < 1) throw ConfigError("workers must be >= 1");
  return w;
}

std::filesystem::path RunConfig::out() const { return get<std::string>(tree_, "/paths/out"_json_pointer); }
std::filesystem::path RunConfig::data_dir() const { return input_path(tree_, "data_dir", out() / "data"); }
std::filesystem::path RunConfig::model_dir() const { return input_path(tree_, "model_dir", out() / "model"); }
std::filesystem::path RunConfig::word_model_dir() const {
  return input_path(tree_, "word_model_dir", out() / "word_model");
}
std::filesystem::path RunConfig::dumps_dir() const { return input_path(tree_, "dumps_dir", out() / "attributions"); }

ModelConfig RunConfig::model_config() const {
  ModelConfig c = ModelConfig::from_json(tree_["model"]);
  c.head = head_for(objective());
  c.orientation = orientation_for(objective());
  return c;
}

TrainOptions RunConfig::train_options() const {
  json t = tree_["training"];
  t.erase("objective");
  t.erase("word_model");
  t["seed"] = seed();
  return TrainOptions::from_json(t);
}

Objective RunConfig::objective() const {
  return parse_objective(get<std::string>(tree_, "/training/objective"_json_pointer));
}

eval::EvalOptions RunConfig::eval_options() const {
  eval::EvalOptions o;
  o.protocol = eval::parse_protocol(get<std::string>(tree_, "/evaluation/protocol"_json_pointer));
  o.da_threshold = get<double>(tree_, "/evaluation/da_threshold"_json_pointer);
  return o;
}

corpus::ToyOptions RunConfig::toy_options() const {
  corpus::ToyOptions o;
  o.train_size = get<std::size_t>(tree_, "/data/train_size"_json_pointer);
  o.dev_size = get<std::size_t>(tree_, "/data/dev_size"_json_pointer);
  o.test_size = get<std::size_t>(tree_, "/data/test_size"_json_pointer);
  o.corrupt_fraction = get<double>(tree_, "/data/corrupt_fraction"_json_pointer);
  o.rate = get<double>(tree_, "/data/rate"_json_pointer);
  o.seed = seed();
  if (!(o.rate >= 0.0 && o.rate <= 1.0)) throw ConfigError("data.rate must lie in [0,1]");
  if (!(o.corrupt_fraction >= 0.0 && o.corrupt_fraction <= 1.0)) {
    throw ConfigError("data.corrupt_fraction must lie in [0,1]");
  }
  return o;
}

void RunConfig::validate() const {
  seed();
  workers();
  out();
  ad::parse_precision(get<std::string>(tree_, "/precision"_json_pointer));
  ad::parse_precision(get<std::string>(tree_, "/attribution/precision"_json_pointer));
  const auto source = get<std::string>(tree_, "/data/source"_json_pointer);
  if (source != "synthetic" && source != "files") throw ConfigError("data.source must be 'synthetic' or 'files'");
  corpus::parse_format(get<std::string>(tree_, "/data/format"_json_pointer));
  if (source == "files") {
    for (const char* s : {"train", "dev", "test"})
      if (tree_["data"]["files"][s].is_null()) throw ConfigError(std::string("data.files.") + s + " is required");
  } else {
    toy_options();
  }
  ModelConfig mc = model_config();
  mc.vocab_size = static_cast<std::size_t>(special::count) + 1;  // checked for real once the vocabulary exists
  mc.validate();
  train_options();
  eval_options();
  for (const auto& m : tree_["attribution"]["methods"]) attr::parse_method(m.get<std::string>());
  for (const auto& m : tree_["sweep"]["methods"]) {
    const auto method = attr::parse_method(m.get<std::string>());
    if (!attr::is_layered(method)) throw ConfigError("sweep method '" + m.get<std::string>() + "' has no layers");
  }
  if (!attr::is_layered(attr::parse_method(get<std::string>(tree_, "/analysis/method"_json_pointer)))) {
    throw ConfigError("analysis.method must attribute to layers");
  }
  const auto& layers = tree_["attribution"]["layers"];
  if (!(layers.is_string() && layers.get<std::string>() == "all") && !layers.is_array()) {
    throw ConfigError("attribution.layers must be \"all\" or a list of layer indices");
  }
  for (const char* s : {"/attribution/split", "/analysis/split", "/evaluation/split"}) {
    const auto v = get<std::string>(tree_, json::json_pointer(s));
    if (v != "train" && v != "dev" && v != "test") throw ConfigError(std::string(s) + " must name a split");
  }
  const auto red = get<std::string>(tree_, "/attribution/ig/reduction"_json_pointer);
  if (red != "sum" && red != "l2") throw ConfigError("attribution.ig.reduction must be 'sum' or 'l2'");
  const auto q = get<std::string>(tree_, "/attribution/attention/queries"_json_pointer);
  if (q != "all" && q != "cls") throw ConfigError("attribution.attention.queries must be 'all' or 'cls'");
  method_context(*this);
}

std::string RunConfig::snapshot() const {
  json t = tree_;
  auto abs = [](const std::filesystem::path& p) { return std::filesystem::absolute(p).lexically_normal().string(); };
  t["paths"]["out"] = abs(out());
  t["paths"]["data_dir"] = abs(data_dir());
  t["paths"]["model_dir"] = abs(model_dir());
  t["paths"]["word_model_dir"] = abs(word_model_dir());
  t["paths"]["dumps_dir"] = abs(dumps_dir());
  return t.dump(2) + "\n";
}

MethodContext method_context(const RunConfig& config) {
  const json& a = config.tree()["attribution"];
  MethodContext ctx;
  try {
    ctx.ig.steps = a["ig"]["steps"].get<std::size_t>();
    ctx.ig.l2_norm = a["ig"]["reduction"].get<std::string>() == "l2";
    ctx.ib.beta = a["ib"]["beta"].get<double>();
    ctx.ib.steps = a["ib"]["steps"].get<std::size_t>();
    ctx.ib.learning_rate = a["ib"]["learning_rate"].get<double>();
    ctx.ib.init_logit = a["ib"]["init_logit"].get<double>();
    ctx.attention_cls_row = a["attention"]["queries"].get<std::string>() == "cls";
    ctx.lime.samples = a["lime"]["samples"].get<std::size_t>();
    ctx.lime.kernel_width = a["lime"]["kernel_width"].get<double>();
    ctx.lime.ridge = a["lime"]["ridge"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("attribution settings: ") + e.what());
  }
  if (ctx.ig.steps < 1) throw ConfigError("attribution.ig.steps must be >= 1");
  if (ctx.lime.samples < 10) throw ConfigError("attribution.lime.samples must be >= 10");
  ctx.seed = config.seed();
  ctx.workers = config.workers();
  return ctx;
}

std::vector<std::size_t> layers_for(const RunConfig& config, attr::Method method, std::size_t model_layers) {
  const std::size_t first = method == attr::Method::attention ? 1 : 0;
  std::vector<std::size_t> out;
  const json& l = config.tree()["attribution"]["layers"];
  if (l.is_string()) {
    for (std::size_t i = first; i <= model_layers; ++i) out.push_back(i);
    return out;
  }
  for (const auto& v : l) {
    const auto layer = v.get<std::size_t>();
    if (layer > model_layers || layer < first) {
      throw ConfigError("layer " + std::to_string(layer) + " is not available for " +
                        std::string(attr::method_name(method)));
    }
    out.push_back(layer);
  }
  return out;
}

std::string dump_name(attr::Method method, std::optional<std::size_t> layer) {
  std::string n(attr::method_name(method));
  if (layer) n += "-L" + std::to_string(*layer);
  return n + ".jsonl";
}

}  // namespace attriqe::pipeline
