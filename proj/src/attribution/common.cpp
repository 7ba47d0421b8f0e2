#include <cmath>
#include <fstream>

#include "attriqe/attribution.hpp"
#include "attriqe/errors.hpp"
#include "attriqe/train.hpp"

namespace attriqe::attr {

std::string_view method_name(Method m) noexcept {
  switch (m) {
    case Method::ig: return "ig";
    case Method::ib: return "ib";
    case Method::attention: return "attention";
    case Method::lime: return "lime";
    case Method::random: return "random";
    case Method::glassbox: return "glassbox";
    case Method::supervised: return "supervised";
    case Method::external: return "external";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::ig, Method::ib, Method::attention, Method::lime, Method::random, Method::glassbox,
                   Method::supervised, Method::external}) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown attribution method '" + std::string(name) + "'");
}

bool is_layered(Method m) noexcept { return m == Method::ig || m == Method::ib || m == Method::attention; }

bool needs_orientation(Method m) noexcept { return m == Method::ig || m == Method::lime; }

std::vector<double> orient(std::span<const double> raw, Method m, Orientation o) {
  std::vector<double> out(raw.begin(), raw.end());
  if (needs_orientation(m) && o == Orientation::higher_is_better)
    for (auto& v : out) v = -v;
  return out;
}

void Attribution::validate() const {
  auto check = [&](const std::vector<double>& v, const char* what) {
    for (double x : v)
      if (!std::isfinite(x)) throw NumericError("attribution '" + id + "': non-finite " + what + " score");
  };
  check(raw, "raw");
  check(source_scores, "source");
  check(target_scores, "target");
}

void assign_word_scores(Attribution& a, std::span<const double> oriented, const EncodedInput& input) {
  a.source_scores = corpus::map_subword_scores_to_words(oriented, input, Side::source);
  a.target_scores = corpus::map_subword_scores_to_words(oriented, input, Side::target);
}

template <typename T>
std::vector<double> attention_scores(std::span<const ad::Tensor<T>> maps, bool cls_row) {
  if (maps.empty()) throw ContractError("attention_scores: no attention maps");
  const std::size_t n = maps[0].cols();
  std::vector<double> out(n, 0.0);
  for (const auto& m : maps) {
    if (m.rank() != 2 || m.rows() != n || m.cols() != n) {
      throw DimensionError("attention_scores: map of shape " + ad::to_string(m.shape()) + " is not square " +
                           std::to_string(n));
    }
    const std::size_t rows = cls_row ? 1 : n;
    for (std::size_t q = 0; q < rows; ++q)
      for (std::size_t k = 0; k < n; ++k) out[k] += static_cast<double>(m.at(q, k));
  }
  const double denom = static_cast<double>(maps.size()) * static_cast<double>(cls_row ? 1 : n);
  for (auto& v : out) v /= denom;
  return out;
}

template <typename T>
Attribution attention_attribution(const EncodedInput& input, const HiddenTrace<T>& trace, std::size_t layer,
                                  bool cls_row) {
  if (layer < 1 || layer > trace.attention.size()) {
    throw ContractError("attention exists for layers 1.." + std::to_string(trace.attention.size()) + ", not " +
                        std::to_string(layer));
  }
  Attribution a;
  a.method = Method::attention;
  a.layer = layer;
  a.raw = attention_scores<T>(trace.attention[layer - 1], cls_row);
  a.meta = {{"queries", cls_row ? "cls" : "all"}, {"prediction", static_cast<double>(trace.prediction)}};
  assign_word_scores(a, a.raw, input);
  return a;
}

Attribution random_scores(const corpus::Example& e, Rng& rng) {
  Attribution a;
  a.id = e.id;
  a.method = Method::random;
  for (std::size_t i = 0; i < e.source.size(); ++i) a.source_scores.push_back(uniform01(rng));
  for (std::size_t i = 0; i < e.target.size(); ++i) a.target_scores.push_back(uniform01(rng));
  a.raw = a.target_scores;
  return a;
}

Attribution glassbox_scores(const corpus::Example& e) {
  if (!e.logprobs) throw DataError("example '" + e.id + "' has no MT log-probabilities");
  if (e.logprobs->size() != e.target.size()) {
    throw DataError("example '" + e.id + "': log-probability count does not match the target length");
  }
  Attribution a;
  a.id = e.id;
  a.method = Method::glassbox;
  for (double lp : *e.logprobs) a.target_scores.push_back(-lp);
  a.raw = a.target_scores;
  return a;
}

template <typename T>
Attribution supervised_scores(const QeModel<T>& word_model, const corpus::Vocabulary& vocab, const corpus::Example& e) {
  Attribution a;
  a.id = e.id;
  a.method = Method::supervised;
  a.target_scores = word_bad_probabilities(word_model, vocab, e);
  a.raw = a.target_scores;
  return a;
}

nlohmann::json to_json(const Attribution& a) {
  nlohmann::json j;
  j["id"] = a.id;
  j["method"] = method_name(a.method);
  j["layer"] = a.layer ? nlohmann::json(*a.layer) : nlohmann::json(nullptr);
  j["raw"] = a.raw;
  j["source_scores"] = a.source_scores;
  j["target_scores"] = a.target_scores;
  j["meta"] = a.meta;
  return j;
}

Attribution from_json(const nlohmann::json& j, std::size_t line_no) {
  const std::string where = "attribution record " + std::to_string(line_no);
  try {
    Attribution a;
    a.id = j.at("id").get<std::string>();
    a.method = j.contains("method") ? parse_method(j["method"].get<std::string>()) : Method::external;
    if (j.contains("layer") && !j["layer"].is_null()) a.layer = j["layer"].get<std::size_t>();
    a.target_scores = j.at("target_scores").get<std::vector<double>>();
    if (j.contains("raw")) a.raw = j["raw"].get<std::vector<double>>();
    if (j.contains("source_scores")) a.source_scores = j["source_scores"].get<std::vector<double>>();
    if (j.contains("meta")) a.meta = j["meta"];
    a.validate();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": " + e.what());
  }
}

std::string serialize_dump(std::span<const Attribution> dump) {
  std::string out;
  for (const auto& a : dump) out += to_json(a).dump() + '\n';
  return out;
}

void write_dump(const std::filesystem::path& path, std::span<const Attribution> dump) {
  write_file(path, serialize_dump(dump));
}

std::vector<Attribution> read_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open attribution dump '" + path.string() + "'");
  std::vector<Attribution> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(from_json(j, line_no));
  }
  return out;
}

template std::vector<double> attention_scores<float>(std::span<const ad::Tensor<float>>, bool);
template std::vector<double> attention_scores<double>(std::span<const ad::Tensor<double>>, bool);
template Attribution attention_attribution<float>(const EncodedInput&, const HiddenTrace<float>&, std::size_t, bool);
template Attribution attention_attribution<double>(const EncodedInput&, const HiddenTrace<double>&, std::size_t, bool);
template Attribution supervised_scores<float>(const QeModel<float>&, const corpus::Vocabulary&, const corpus::Example&);
template Attribution supervised_scores<double>(const QeModel<double>&, const corpus::Vocabulary&,
                                               const corpus::Example&);

}  // namespace attriqe::attr
