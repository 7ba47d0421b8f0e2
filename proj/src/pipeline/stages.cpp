#include <algorithm>
#include <chrono>
#include <set>

#include <spdlog/spdlog.h>

#include "attriqe/errors.hpp"
#include "attriqe/pipeline.hpp"

namespace attriqe::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// One output directory per stage. Files are only ever written into a fresh
// directory, and log records carry no wall-clock data, so a replay writes
// the same bytes.
class StageDir {
 public:
  StageDir(const RunConfig& config, const fs::path& dir, std::string stage, const StageOptions& opt)
      : dir_(dir), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {
    if (fs::exists(dir_) && !fs::is_empty(dir_)) {
      if (!opt.force) {
        throw StateError("output directory '" + dir_.string() + "' already exists; pass --force to replace it");
      }
      fs::remove_all(dir_);
    }
    fs::create_directories(dir_);
    write_file(dir_ / "config.json", config.snapshot());
  }

  const fs::path& path() const noexcept { return dir_; }
  void log(json record) {
    record["stage"] = stage_;
    log_ += record.dump() + "\n";
  }
  void write(const fs::path& rel, std::string_view contents) const {
    fs::create_directories((dir_ / rel).parent_path());
    write_file(dir_ / rel, contents);
  }
  fs::path finish() {
    write_file(dir_ / "log.jsonl", log_);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    spdlog::info("{}: wrote {} ({:.1f} s)", stage_, dir_.string(), secs);
    return dir_;
  }

 private:
  fs::path dir_;
  std::string stage_;
  std::string log_;
  std::chrono::steady_clock::time_point start_;
};

void require_dir(const fs::path& dir, const std::string& what) {
  if (!fs::is_directory(dir)) throw PathError(what + " '" + dir.string() + "' does not exist");
}

std::optional<std::size_t> optional_size(const json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<std::size_t>();
}

std::vector<corpus::Example> take(const std::vector<corpus::Example>& all, std::optional<std::size_t> limit) {
  if (!limit || *limit >= all.size()) return all;
  return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(*limit)};
}

ad::Precision attribution_precision(const RunConfig& c) {
  return ad::parse_precision(c.tree()["attribution"]["precision"].get<std::string>());
}

std::vector<attr::Method> methods_of(const json& list) {
  std::vector<attr::Method> out;
  for (const auto& m : list) out.push_back(attr::parse_method(m.get<std::string>()));
  return out;
}

bool needs_word_model(const std::vector<attr::Method>& methods) {
  return std::find(methods.begin(), methods.end(), attr::Method::supervised) != methods.end();
}

// Model, vocabulary, optional word model and IB prior for one stage.
template <typename T>
struct Explainer {
  LoadedModel<T> loaded;
  std::optional<LoadedModel<T>> word;
  std::optional<attr::IbPrior> prior;
  MethodContext ctx;

  Explainer(const RunConfig& config, const Dataset& data, const std::vector<attr::Method>& methods)
      : loaded(load_checked(config.model_dir(), "model directory")), ctx(method_context(config)) {
    if (needs_word_model(methods)) {
      word = load_checked(config.word_model_dir(), "word model directory");
      if (word->vocab.hash() != loaded.vocab.hash()) {
        throw DataError("the word model and the sentence model use different vocabularies");
      }
    }
    if (std::find(methods.begin(), methods.end(), attr::Method::ib) != methods.end()) {
      const auto n = config.tree()["attribution"]["ib"]["prior_sentences"].get<std::size_t>();
      std::vector<EncodedInput> inputs;
      for (const auto& e : take(data.dev, n)) inputs.push_back(loaded.vocab.encode(e.source, e.target));
      if (inputs.empty()) throw DataError("the IB prior needs at least one dev sentence");
      prior = attr::estimate_ib_prior(loaded.model, inputs);
      ctx.prior = &*prior;
    }
  }

  static LoadedModel<T> load_checked(const fs::path& dir, const std::string& what) {
    require_dir(dir, what);
    return load_model<T>(dir);
  }

  std::map<std::optional<std::size_t>, std::vector<attr::Attribution>> run(
      std::span<const corpus::Example> examples, attr::Method method, const std::vector<std::size_t>& layers) const {
    return run_method(loaded.model, loaded.vocab, examples, method, layers, ctx, word ? &word->model : nullptr);
  }
};

template <typename Fn>
auto with_precision(ad::Precision p, Fn&& fn) {
  if (p == ad::Precision::f64) return fn(double{});
  return fn(float{});
}

std::string split_of(const RunConfig& c, const char* section) {
  return c.tree()[section]["split"].get<std::string>();
}

void write_report(StageDir& dir, const std::string& stem, const eval::EvalReport& report) {
  dir.write(stem + ".json", report.to_json().dump(2) + "\n");
  dir.write(stem + ".csv", report.to_csv());
}

// Dev AUC per layer as a plotting-friendly curve.
std::string curve_csv(std::span<const eval::MetricRow> rows) {
  std::string out = "layer,auc,ap,acc_top1,rec_topk\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f}\n", r.layer.value_or(0), r.auc, r.ap, r.acc_top1, r.rec_topk);
  }
  return out;
}

corpus::LoadOptions load_options(const RunConfig& c) {
  const json& d = c.tree()["data"];
  corpus::LoadOptions o;
  o.strict_hter = d["strict_hter"].get<bool>();
  o.skip_header = d["skip_header"].get<bool>();
  o.strip_gap_tags = d["strip_gap_tags"].get<bool>();
  return o;
}

json split_stats(const std::vector<corpus::Example>& split) {
  std::size_t words = 0, bad = 0, errors = 0, below = 0, with_da = 0;
  for (const auto& e : split) {
    words += e.target.size();
    bad += static_cast<std::size_t>(std::count(e.labels.begin(), e.labels.end(), corpus::Label::bad));
    if (e.has_labels() && e.has_error()) ++errors;
    if (e.da) {
      ++with_da;
      if (*e.da < 70.0) ++below;
    }
  }
  return {{"sentences", split.size()}, {"target_words", words}, {"bad_words", bad},   {"sentences_with_error", errors},
          {"with_da", with_da},       {"da_below_70", below},   {"labelled", static_cast<std::size_t>(std::count_if(
                                                                     split.begin(), split.end(),
                                                                     [](const auto& e) { return e.has_labels(); }))}};
}

}  // namespace

const std::vector<corpus::Example>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + name + "'");
}

Dataset load_data(const fs::path& dir) {
  require_dir(dir, "data directory");
  Dataset d;
  d.train = corpus::load_dataset(dir / "train.jsonl", corpus::DatasetFormat::jsonl);
  d.dev = corpus::load_dataset(dir / "dev.jsonl", corpus::DatasetFormat::jsonl);
  d.test = corpus::load_dataset(dir / "test.jsonl", corpus::DatasetFormat::jsonl);
  return d;
}

// ---- gen-data --------------------------------------------------------------------

fs::path gen_data(const RunConfig& config, const StageOptions& opt) {
  config.validate();
  const json& d = config.tree()["data"];
  Dataset data;
  json provenance;
  if (d["source"] == "synthetic") {
    std::vector<corpus::SentencePair> pairs;
    if (!config.tree()["paths"]["corpus"].is_null()) {
      const fs::path corpus_path = config.tree()["paths"]["corpus"].get<std::string>();
      if (!fs::exists(corpus_path)) throw PathError("corpus file '" + corpus_path.string() + "' does not exist");
      pairs = corpus::load_parallel_corpus(corpus_path);
      provenance["corpus"] = fs::absolute(corpus_path).lexically_normal().string();
    } else {
      pairs = corpus::generate_synthetic_corpus(d["synthetic_pairs"].get<std::size_t>(), config.seed());
      provenance["corpus"] = "synthetic";
    }
    auto toy = corpus::generate_toy_dataset(pairs, config.toy_options());
    data.train = std::move(toy.train);
    data.dev = std::move(toy.dev);
    data.test = std::move(toy.test);
  } else {
    const auto format = corpus::parse_format(d["format"].get<std::string>());
    const auto lo = load_options(config);
    for (const char* s : {"train", "dev", "test"}) {
      const fs::path p = d["files"][s].get<std::string>();
      if (!fs::exists(p)) throw PathError(std::string(s) + " file '" + p.string() + "' does not exist");
      auto examples = corpus::load_dataset(p, format, lo);
      if (!d["logprobs"][s].is_null()) {
        const fs::path lp = d["logprobs"][s].get<std::string>();
        if (!fs::exists(lp)) throw PathError("log-probability file '" + lp.string() + "' does not exist");
        corpus::attach_logprobs(examples, lp);
      }
      auto& slot = std::string_view(s) == "train" ? data.train : std::string_view(s) == "dev" ? data.dev : data.test;
      slot = std::move(examples);
    }
    provenance["corpus"] = "files";
  }
  if (data.train.empty() || data.dev.empty() || data.test.empty()) throw DataError("every split needs examples");

  StageDir out(config, config.out() / "data", "gen-data", opt);
  json stats = {{"provenance", provenance}};
  for (const char* s : {"train", "dev", "test"}) {
    out.write(std::string(s) + ".jsonl", corpus::serialize_jsonl(data.split(s)));
    stats[s] = split_stats(data.split(s));
    out.log({{"split", s}, {"examples", data.split(s).size()}});
  }
  out.write("stats.json", stats.dump(2) + "\n");
  return out.finish();
}

// ---- train -----------------------------------------------------------------------

namespace {

template <typename T>
json sentence_scores(const TrainResult<T>& r, const corpus::Vocabulary& vocab, const std::vector<corpus::Example>& split,
                     Objective objective) {
  std::vector<double> pred, gold;
  for (const auto& e : split) {
    pred.push_back(static_cast<double>(r.model.predict(vocab.encode(e.source, e.target))));
    gold.push_back(sentence_target(e, objective));
  }
  json j;
  if (objective == Objective::binary) {
    std::vector<bool> p, g;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      p.push_back(pred[i] >= 0.5);
      g.push_back(gold[i] >= 0.5);
    }
    j["f1"] = eval::f1_score(p, g);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < p.size(); ++i) correct += p[i] == g[i];
    j["accuracy"] = static_cast<double>(correct) / static_cast<double>(p.size());
  } else {
    try {
      j["pearson"] = pearson(pred, gold);
    } catch (const NumericError&) {
      j["pearson"] = nullptr;
    }
  }
  return j;
}

}  // namespace

fs::path train(const RunConfig& config, const StageOptions& opt) {
  config.validate();
  const Dataset data = load_data(config.data_dir());
  const Objective objective = config.objective();
  const auto build = corpus::Vocabulary::BuildOptions{config.tree()["data"]["bpe_merges"].get<std::size_t>()};
  const corpus::Vocabulary vocab = corpus::Vocabulary::build(data.train, build);
  ModelConfig mc = config.model_config();
  mc.vocab_size = vocab.size();
  mc.validate();
  const TrainOptions to = config.train_options();
  const bool word = config.tree()["training"]["word_model"].get<bool>();
  const auto precision = ad::parse_precision(config.tree()["precision"].get<std::string>());

  const fs::path sentence_dir = config.out() / "model";
  StageDir out(config, sentence_dir, "train", opt);
  if (word) {
    // The word model is part of the same stage; its directory follows the same rules.
    StageDir word_out(config, config.out() / "word_model", "train-word", opt);
  }

  with_precision(precision, [&](auto tag) {
    using T = decltype(tag);
    const auto r = train_sentence_model<T>(mc, vocab, data.train, data.dev, objective, to);
    for (const auto& rec : r.log) out.log(rec);
    json metrics = {{"objective", objective_name(objective)},
                    {"dev_metric", r.metric_name},
                    {"best_dev", r.best_metric},
                    {"best_epoch", r.best_epoch},
                    {"dev", sentence_scores(r, vocab, data.dev, objective)},
                    {"test", sentence_scores(r, vocab, data.test, objective)}};
    save_model(sentence_dir, r.model, vocab, {{"objective", objective_name(objective)}});
    out.write("metrics.json", metrics.dump(2) + "\n");
    if (word) {
      ModelConfig wc = mc;
      wc.head = HeadKind::token;
      wc.orientation = Orientation::higher_is_worse;
      const auto w = train_word_model<T>(wc, vocab, data.train, data.dev, to);
      const fs::path wdir = config.out() / "word_model";
      save_model(wdir, w.model, vocab, {{"objective", "word"}});
      std::string log;
      for (auto rec : w.log) {
        rec["stage"] = "train-word";
        log += rec.dump() + "\n";
      }
      write_file(wdir / "log.jsonl", log);
      write_file(wdir / "metrics.json",
                 json{{"dev_metric", w.metric_name}, {"best_dev", w.best_metric}, {"best_epoch", w.best_epoch}}.dump(2) +
                     "\n");
    }
    return 0;
  });
  return out.finish();
}

// ---- attribute -------------------------------------------------------------------

fs::path attribute(const RunConfig& config, const StageOptions& opt) {
  config.validate();
  const Dataset data = load_data(config.data_dir());
  const std::string split = split_of(config, "attribution");
  const auto limit = optional_size(config.tree()["attribution"]["limit"]);
  const auto examples = take(data.split(split), limit);
  const auto methods = methods_of(config.tree()["attribution"]["methods"]);
  if (methods.empty()) throw ConfigError("attribution.methods is empty");

  return with_precision(attribution_precision(config), [&](auto tag) {
    using T = decltype(tag);
    const Explainer<T> ex(config, data, methods);
    std::vector<std::pair<attr::Method, std::vector<std::size_t>>> plan;
    for (auto m : methods) {
      plan.emplace_back(m, attr::is_layered(m) ? layers_for(config, m, ex.loaded.model.config().layers)
                                               : std::vector<std::size_t>{});
    }

    StageDir out(config, config.out() / "attributions", "attribute", opt);
    json manifest = {{"split", split}, {"limit", limit ? json(*limit) : json(nullptr)}, {"files", json::array()}};
    if (ex.prior) out.write("ib_prior.json", ex.prior->to_json().dump() + "\n");
    for (const auto& [method, layers] : plan) {
      const auto dumps = ex.run(examples, method, layers);
      for (const auto& [layer, dump] : dumps) {
        const std::string name = dump_name(method, layer);
        out.write(name, attr::serialize_dump(dump));
        manifest["files"].push_back(name);
        out.log({{"method", attr::method_name(method)},
                 {"layer", layer ? json(*layer) : json(nullptr)},
                 {"instances", dump.size()}});
      }
    }
    out.write("manifest.json", manifest.dump(2) + "\n");
    return out.finish();
  });
}

// ---- evaluate --------------------------------------------------------------------

fs::path evaluate(const RunConfig& config, const std::vector<fs::path>& dumps, const StageOptions& opt) {
  config.validate();
  const auto eo = config.eval_options();
  std::vector<fs::path> files = dumps;
  std::string split = split_of(config, "evaluation");
  std::optional<std::size_t> limit;
  if (files.empty()) {
    const fs::path dir = config.dumps_dir();
    require_dir(dir, "attribution directory");
    if (fs::exists(dir / "manifest.json")) {
      const json m = json::parse(read_file(dir / "manifest.json"));
      split = m.at("split").get<std::string>();
      limit = optional_size(m.at("limit"));
      for (const auto& f : m.at("files")) files.push_back(dir / f.get<std::string>());
    } else {
      for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
      std::sort(files.begin(), files.end());
    }
  }
  if (files.empty()) throw PathError("no attribution dumps to evaluate");
  for (const auto& f : files)
    if (!fs::exists(f)) throw PathError("attribution dump '" + f.string() + "' does not exist");

  const Dataset data = load_data(config.data_dir());
  const auto gold = take(data.split(split), limit);
  eval::check_protocol(gold, eo);

  StageDir out(config, config.out() / "eval", "evaluate", opt);
  eval::EvalReport report;
  for (const auto& f : files) {
    const auto dump = attr::read_dump(f);
    auto part = eval::evaluate_all(dump, gold, eo);
    for (auto& row : part.rows) {
      out.log({{"dump", f.filename().string()}, {"row", row.to_json()}});
      report.rows.push_back(std::move(row));
    }
  }
  write_report(out, "report", report);
  return out.finish();
}

// ---- sweep -----------------------------------------------------------------------

fs::path sweep(const RunConfig& config, const StageOptions& opt) {
  config.validate();
  const auto eo = config.eval_options();
  const Dataset data = load_data(config.data_dir());
  const json& s = config.tree()["sweep"];
  const auto dev = take(data.dev, optional_size(s["dev_limit"]));
  const auto test = take(data.test, optional_size(s["test_limit"]));
  eval::check_protocol(dev, eo);
  eval::check_protocol(test, eo);
  const auto methods = methods_of(s["methods"]);

  return with_precision(attribution_precision(config), [&](auto tag) {
    using T = decltype(tag);
    const Explainer<T> ex(config, data, methods);
    StageDir out(config, config.out() / "sweep", "sweep", opt);
    json selection = json::object();
    eval::EvalReport combined;
    for (auto method : methods) {
      const std::string name(attr::method_name(method));
      const auto layers = layers_for(config, method, ex.loaded.model.config().layers);
      const auto dev_dumps = ex.run(dev, method, layers);
      eval::EvalReport dev_report;
      for (const auto& [layer, dump] : dev_dumps) {
        out.write(name + "/dev/" + dump_name(method, layer), attr::serialize_dump(dump));
        dev_report.rows.push_back(eval::evaluate(dump, dev, eo));
        out.log({{"method", name}, {"split", "dev"}, {"row", dev_report.rows.back().to_json()}});
      }
      const std::size_t best = eval::select_layer(dev_report.rows);
      const auto test_dumps = ex.run(test, method, {best});
      const auto& test_dump = test_dumps.at(best);
      out.write(name + "/test/" + dump_name(method, best), attr::serialize_dump(test_dump));
      eval::EvalReport test_report;
      test_report.rows.push_back(eval::evaluate(test_dump, test, eo));
      out.log({{"method", name}, {"split", "test"}, {"row", test_report.rows.back().to_json()}});

      write_report(out, name + "/dev_report", dev_report);
      out.write(name + "/dev_curve.csv", curve_csv(dev_report.rows));
      write_report(out, name + "/test_report", test_report);
      const auto it = std::find_if(dev_report.rows.begin(), dev_report.rows.end(),
                                   [&](const auto& r) { return r.layer == best; });
      selection[name] = {{"layer", best}, {"dev_auc", it->auc}, {"test_auc", test_report.rows[0].auc}};
      combined.rows.push_back(test_report.rows[0]);
    }
    out.write("selected.json", selection.dump(2) + "\n");
    write_report(out, "test_report", combined);
    return out.finish();
  });
}

// ---- analyze ---------------------------------------------------------------------

fs::path analyze(const RunConfig& config, const StageOptions& opt) {
  config.validate();
  const Dataset data = load_data(config.data_dir());
  const json& a = config.tree()["analysis"];
  const auto method = attr::parse_method(a["method"].get<std::string>());
  const auto examples = take(data.split(a["split"].get<std::string>()), optional_size(a["limit"]));
  const eval::FrequencyOptions fo{a["low_percentile"].get<double>(), a["high_percentile"].get<double>()};
  if (!(fo.low_percentile >= 0.0 && fo.low_percentile < fo.high_percentile && fo.high_percentile <= 1.0)) {
    throw ConfigError("analysis percentiles must satisfy 0 <= low < high <= 1");
  }

  return with_precision(attribution_precision(config), [&](auto tag) {
    using T = decltype(tag);
    const Explainer<T> ex(config, data, {method});
    const auto layers = layers_for(config, method, ex.loaded.model.config().layers);
    const auto dumps = ex.run(examples, method, layers);
    StageDir out(config, config.out() / "analysis", "analyze", opt);
    std::vector<eval::CategoryRow> categories;
    std::vector<eval::FrequencyRow> frequencies;
    for (const auto& [layer, dump] : dumps) {
      categories.push_back(eval::category_attribution(dump, examples));
      auto rows = eval::frequency_contrast(dump, examples, ex.loaded.vocab, ex.loaded.model.config().orientation, fo);
      out.log({{"method", attr::method_name(method)}, {"layer", *layer}, {"instances", dump.size()}});
      frequencies.insert(frequencies.end(), rows.begin(), rows.end());
    }
    out.write("categories.csv", eval::category_csv(categories));
    out.write("frequency.csv", eval::frequency_csv(frequencies));
    return out.finish();
  });
}

// ---- report ----------------------------------------------------------------------

fs::path report(const RunConfig& config, const StageOptions& opt) {
  config.validate();
  const fs::path root = config.out();
  json summary = json::object();
  auto read_json = [](const fs::path& p) { return json::parse(read_file(p)); };
  if (fs::exists(root / "data" / "stats.json")) summary["data"] = read_json(root / "data" / "stats.json");
  if (fs::exists(config.model_dir() / "metrics.json")) summary["model"] = read_json(config.model_dir() / "metrics.json");
  if (fs::exists(root / "eval" / "report.json")) summary["evaluation"] = read_json(root / "eval" / "report.json");
  if (fs::exists(root / "sweep" / "selected.json")) {
    summary["sweep"] = {{"selected", read_json(root / "sweep" / "selected.json")},
                        {"test", read_json(root / "sweep" / "test_report.json")}};
  }
  if (summary.empty()) throw PathError("nothing to report under '" + root.string() + "'");

  StageDir out(config, root / "report", "report", opt);
  out.write("summary.json", summary.dump(2) + "\n");

  // A single flat table of every test-set row that the earlier stages produced.
  eval::EvalReport table;
  auto add_rows = [&](const json& rep) {
    for (const auto& r : rep.at("rows")) {
      eval::MetricRow m;
      m.method = r.at("method").get<std::string>();
      if (!r.at("layer").is_null()) m.layer = r.at("layer").get<std::size_t>();
      m.protocol = r.at("protocol").get<std::string>();
      m.auc = r.at("auc").get<double>();
      m.ap = r.at("ap").get<double>();
      m.acc_top1 = r.at("acc_top1").get<double>();
      m.rec_topk = r.at("rec_topk").get<double>();
      m.total = r.at("total").get<std::size_t>();
      m.evaluated = r.at("evaluated").get<std::size_t>();
      m.excluded_all_ok = r.at("excluded_all_ok").get<std::size_t>();
      m.excluded_all_bad = r.at("excluded_all_bad").get<std::size_t>();
      m.filtered_protocol = r.at("filtered_protocol").get<std::size_t>();
      table.rows.push_back(std::move(m));
    }
  };
  if (summary.contains("evaluation")) add_rows(summary["evaluation"]);
  if (summary.contains("sweep")) add_rows(summary["sweep"]["test"]);
  out.write("table.csv", table.to_csv());
  out.log({{"rows", table.rows.size()}});
  return out.finish();
}

}  // namespace attriqe::pipeline
