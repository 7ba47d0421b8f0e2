#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_map>

#include "attriqe/errors.hpp"
#include "attriqe/eval.hpp"

namespace attriqe::eval {

using attr::Attribution;
using corpus::Example;

std::string_view protocol_name(Protocol p) noexcept { return p == Protocol::has_error ? "has_error" : "da_below"; }

Protocol parse_protocol(std::string_view name) {
  if (name == "has_error") return Protocol::has_error;
  if (name == "da_below") return Protocol::da_below;
  throw ConfigError("unknown evaluation protocol '" + std::string(name) + "' (expected has_error or da_below)");
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string layer_text(const std::optional<std::size_t>& l) { return l ? std::to_string(*l) : ""; }

}  // namespace

nlohmann::json MetricRow::to_json() const {
  return {{"method", method},
          {"layer", layer ? nlohmann::json(*layer) : nlohmann::json(nullptr)},
          {"protocol", protocol},
          {"auc", auc},
          {"ap", ap},
          {"acc_top1", acc_top1},
          {"rec_topk", rec_topk},
          {"total", total},
          {"evaluated", evaluated},
          {"excluded_all_ok", excluded_all_ok},
          {"excluded_all_bad", excluded_all_bad},
          {"filtered_protocol", filtered_protocol}};
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) j.push_back(r.to_json());
  return {{"rows", j}};
}

std::string EvalReport::to_csv() const {
  std::string out = "method,layer,protocol,auc,ap,acc_top1,rec_topk,evaluated,excluded_all_ok,excluded_all_bad,"
                    "filtered_protocol,total\n";
  for (const auto& r : rows) {
    out += r.method + ',' + layer_text(r.layer) + ',' + r.protocol + ',' + fmt(r.auc) + ',' + fmt(r.ap) + ',' +
           fmt(r.acc_top1) + ',' + fmt(r.rec_topk) + ',' + std::to_string(r.evaluated) + ',' +
           std::to_string(r.excluded_all_ok) + ',' + std::to_string(r.excluded_all_bad) + ',' +
           std::to_string(r.filtered_protocol) + ',' + std::to_string(r.total) + '\n';
  }
  return out;
}

void check_protocol(std::span<const Example> gold, const EvalOptions& options) {
  for (const auto& e : gold) {
    if (!e.has_labels()) throw ConfigError("evaluation needs word labels, example '" + e.id + "' has none");
    if (options.protocol == Protocol::da_below && !e.da) {
      throw ConfigError("the DA protocol needs DA scores, example '" + e.id + "' has none");
    }
  }
}

MetricRow evaluate(std::span<const Attribution> dump, std::span<const Example> gold, const EvalOptions& options) {
  check_protocol(gold, options);
  std::unordered_map<std::string, const Attribution*> by_id;
  for (const auto& a : dump) {
    if (!by_id.emplace(a.id, &a).second) throw AlignmentError("duplicate attribution for example '" + a.id + "'");
  }
  if (by_id.size() != gold.size()) {
    throw AlignmentError("attribution dump has " + std::to_string(by_id.size()) + " records for " +
                         std::to_string(gold.size()) + " gold examples");
  }

  MetricRow row;
  if (!dump.empty()) {
    row.method = attr::method_name(dump.front().method);
    row.layer = dump.front().layer;
  }
  row.protocol = std::string(protocol_name(options.protocol));
  row.total = gold.size();

  struct Instance {
    std::string id;
    double auc, ap, acc, rec;
  };
  std::vector<Instance> values;
  for (const auto& e : gold) {
    auto it = by_id.find(e.id);
    if (it == by_id.end()) throw AlignmentError("no attribution for gold example '" + e.id + "'");
    const Attribution& a = *it->second;
    if (a.target_scores.size() != e.labels.size()) {
      throw AlignmentError("example '" + e.id + "': " + std::to_string(a.target_scores.size()) +
                           " target scores for " + std::to_string(e.labels.size()) + " labels");
    }
    const bool eligible = options.protocol == Protocol::has_error ? e.has_error() : *e.da < options.da_threshold;
    if (!eligible) {
      ++row.filtered_protocol;
      continue;
    }
    const auto bad = std::count(e.labels.begin(), e.labels.end(), corpus::Label::bad);
    if (bad == 0) {
      ++row.excluded_all_ok;
      continue;
    }
    if (static_cast<std::size_t>(bad) == e.labels.size()) {
      ++row.excluded_all_bad;
      continue;
    }
    values.push_back({e.id, *auc_instance(a.target_scores, e.labels), *ap_instance(a.target_scores, e.labels),
                      *acc_at_top1(a.target_scores, e.labels), *recall_at_top_k(a.target_scores, e.labels)});
  }
  row.evaluated = values.size();
  if (values.empty()) throw DataError("no evaluable instances: every sentence was filtered or excluded");
  // Fixed summation order keeps the report independent of the input order.
  std::sort(values.begin(), values.end(), [](const Instance& a, const Instance& b) { return a.id < b.id; });
  for (const auto& v : values) {
    row.auc += v.auc;
    row.ap += v.ap;
    row.acc_top1 += v.acc;
    row.rec_topk += v.rec;
  }
  const double n = static_cast<double>(values.size());
  row.auc /= n;
  row.ap /= n;
  row.acc_top1 /= n;
  row.rec_topk /= n;
  return row;
}

EvalReport evaluate_all(std::span<const Attribution> dump, std::span<const Example> gold, const EvalOptions& options) {
  std::vector<std::pair<std::string, std::optional<std::size_t>>> keys;
  std::map<std::pair<std::string, long long>, std::vector<Attribution>> groups;
  for (const auto& a : dump) {
    const std::string m(attr::method_name(a.method));
    const std::pair<std::string, long long> key{m, a.layer ? static_cast<long long>(*a.layer) : -1};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) keys.emplace_back(m, a.layer);
    it->second.push_back(a);
  }
  EvalReport report;
  for (const auto& [m, l] : keys) {
    report.rows.push_back(evaluate(groups.at({m, l ? static_cast<long long>(*l) : -1}), gold, options));
  }
  return report;
}

std::size_t select_layer(std::span<const MetricRow> rows) {
  if (rows.empty()) throw ContractError("layer selection over no layers");
  std::size_t best = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].layer) throw ContractError("layer selection needs layered rows");
    const bool better = rows[i].auc > rows[best].auc ||
                        (rows[i].auc == rows[best].auc && *rows[i].layer > *rows[best].layer);
    if (better) best = i;
  }
  return *rows[best].layer;
}

// ---- analyses ----------------------------------------------------------------

namespace {

std::unordered_map<std::string, const Example*> index_gold(std::span<const Example> gold) {
  std::unordered_map<std::string, const Example*> m;
  for (const auto& e : gold) m.emplace(e.id, &e);
  return m;
}

const Example& find_gold(const std::unordered_map<std::string, const Example*>& m, const Attribution& a) {
  auto it = m.find(a.id);
  if (it == m.end()) throw AlignmentError("attribution for unknown example '" + a.id + "'");
  const Example& e = *it->second;
  if (a.target_scores.size() != e.target.size() || a.source_scores.size() != e.source.size()) {
    throw AlignmentError("example '" + a.id + "': score counts do not match the sentence");
  }
  return e;
}

std::size_t top_index(const std::vector<double>& s) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] > s[best]) best = i;
  return best;
}

}  // namespace

CategoryRow category_attribution(std::span<const Attribution> dump, std::span<const Example> gold) {
  const auto index = index_gold(gold);
  CategoryRow row;
  if (!dump.empty()) row.layer = dump.front().layer;
  double src = 0.0, ok = 0.0, bad = 0.0;
  for (const auto& a : dump) {
    const Example& e = find_gold(index, a);
    if (!e.has_labels()) throw DataError("category analysis needs word labels ('" + e.id + "')");
    std::vector<double> all(a.source_scores);
    all.insert(all.end(), a.target_scores.begin(), a.target_scores.end());
    double mean = 0.0, var = 0.0;
    for (double v : all) mean += v;
    mean /= static_cast<double>(all.size());
    for (double v : all) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(all.size()));
    auto z = [&](double v) { return sd > 0.0 ? (v - mean) / sd : 0.0; };
    for (double v : a.source_scores) src += z(v);
    row.source_words += a.source_scores.size();
    for (std::size_t i = 0; i < a.target_scores.size(); ++i) {
      if (e.labels[i] == corpus::Label::bad) {
        bad += z(a.target_scores[i]);
        ++row.bad_words;
      } else {
        ok += z(a.target_scores[i]);
        ++row.ok_words;
      }
    }
  }
  if (row.source_words) row.source = src / static_cast<double>(row.source_words);
  if (row.ok_words) row.target_ok = ok / static_cast<double>(row.ok_words);
  if (row.bad_words) row.target_bad = bad / static_cast<double>(row.bad_words);
  return row;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw BucketError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<FrequencyRow> frequency_contrast(std::span<const Attribution> dump, std::span<const Example> gold,
                                             const corpus::Vocabulary& vocab, Orientation orientation,
                                             const FrequencyOptions& options) {
  const auto index = index_gold(gold);
  std::vector<double> quality;
  for (const auto& a : dump) {
    if (!a.meta.contains("prediction")) {
      throw DataError("frequency analysis needs the model prediction in every dump record ('" + a.id + "')");
    }
    const double p = a.meta["prediction"].get<double>();
    quality.push_back(orientation == Orientation::higher_is_better ? p : -p);
  }
  const double lo = percentile(quality, options.low_percentile);
  const double hi = percentile(quality, options.high_percentile);

  std::vector<FrequencyRow> rows;
  for (const char* side : {"source", "target"}) {
    for (const char* bucket : {"low", "high"}) {
      FrequencyRow row;
      row.layer = dump.empty() ? std::nullopt : dump.front().layer;
      row.side = side;
      row.bucket = bucket;
      double top = 0.0, all = 0.0;
      std::size_t words = 0;
      for (std::size_t k = 0; k < dump.size(); ++k) {
        const bool in = row.bucket == "low" ? quality[k] < lo : quality[k] > hi;
        if (!in) continue;
        const Example& e = find_gold(index, dump[k]);
        const bool src = row.side == "source";
        const auto& scores = src ? dump[k].source_scores : dump[k].target_scores;
        const auto& text = src ? e.source : e.target;
        if (scores.empty()) continue;
        top += static_cast<double>(vocab.word_frequency(text[top_index(scores)]));
        for (const auto& w : text) all += static_cast<double>(vocab.word_frequency(w));
        words += text.size();
        ++row.sentences;
      }
      if (row.sentences == 0) {
        throw BucketError(std::string("no sentences in the ") + bucket + "-quality bucket (" + side + " side)");
      }
      row.top_frequency = top / static_cast<double>(row.sentences);
      row.mean_frequency = all / static_cast<double>(words);
      row.gap = row.top_frequency - row.mean_frequency;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string category_csv(std::span<const CategoryRow> rows) {
  std::string out = "layer,source,target_ok,target_bad,source_words,ok_words,bad_words\n";
  for (const auto& r : rows) {
    out += layer_text(r.layer) + ',' + fmt(r.source) + ',' + fmt(r.target_ok) + ',' +
           (r.target_bad ? fmt(*r.target_bad) : "") + ',' + std::to_string(r.source_words) + ',' +
           std::to_string(r.ok_words) + ',' + std::to_string(r.bad_words) + '\n';
  }
  return out;
}

std::string frequency_csv(std::span<const FrequencyRow> rows) {
  std::string out = "layer,side,bucket,sentences,top_frequency,mean_frequency,gap\n";
  for (const auto& r : rows) {
    out += layer_text(r.layer) + ',' + r.side + ',' + r.bucket + ',' + std::to_string(r.sentences) + ',' +
           fmt(r.top_frequency) + ',' + fmt(r.mean_frequency) + ',' + fmt(r.gap) + '\n';
  }
  return out;
}

}  // namespace attriqe::eval
