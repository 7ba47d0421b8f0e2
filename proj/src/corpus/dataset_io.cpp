#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "attriqe/corpus.hpp"
#include "attriqe/errors.hpp"

namespace attriqe::corpus {

using nlohmann::json;

DatasetFormat parse_format(std::string_view name) {
  if (name == "jsonl") return DatasetFormat::jsonl;
  if (name == "tsv") return DatasetFormat::tsv;
  throw ConfigError("unknown dataset format '" + std::string(name) + "' (expected jsonl or tsv)");
}

json example_to_json(const Example& e) {
  json j;
  j["id"] = e.id;
  j["src"] = join(e.source);
  j["mt"] = join(e.target);
  j["labels"] = json::array();
  for (Label l : e.labels) j["labels"].push_back(label_name(l));
  if (e.da) j["da"] = *e.da;
  if (e.hter) j["hter"] = *e.hter;
  if (e.logprobs) j["logprobs"] = *e.logprobs;
  return j;
}

Example example_from_json(const json& j, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no);
  if (!j.is_object()) throw ParseError(where + ": expected a JSON object");
  try {
    Example e;
    e.id = j.contains("id") ? j["id"].get<std::string>() : "line-" + std::to_string(line_no);
    e.source = split_whitespace(j.at("src").get<std::string>());
    e.target = split_whitespace(j.at("mt").get<std::string>());
    if (j.contains("labels"))
      for (const auto& l : j["labels"]) e.labels.push_back(parse_label(l.get<std::string>()));
    if (j.contains("da") && !j["da"].is_null()) e.da = j["da"].get<double>();
    if (j.contains("hter") && !j["hter"].is_null()) e.hter = j["hter"].get<double>();
    if (j.contains("logprobs") && !j["logprobs"].is_null()) e.logprobs = j["logprobs"].get<std::vector<double>>();
    return e;
  } catch (const json::exception& ex) {
    throw ParseError(where + ": " + ex.what());
  }
}

namespace {

std::optional<double> parse_number(const std::string& field, const std::string& where) {
  if (field.empty()) return std::nullopt;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    throw ParseError(where + ": '" + field + "' is not a number");
  }
  if (used != field.size()) throw ParseError(where + ": '" + field + "' is not a number");
  return v;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<Example> load_jsonl(std::istream& in, const std::string& name, const LoadOptions& options) {
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& ex) {
      throw ParseError(name + ":" + std::to_string(line_no) + ": " + ex.what());
    }
    Example e = example_from_json(j, line_no);
    try {
      e.validate(options.strict_hter);
    } catch (const DataError& ex) {
      throw DataError(name + ":" + std::to_string(line_no) + ": " + ex.what());
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Example> load_tsv(std::istream& in, const std::string& name, const LoadOptions& options) {
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && options.skip_header) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(line_no);
    const auto cols = split_tabs(line);
    if (cols.size() != 5) {
      throw ParseError(where + ": expected 5 tab-separated columns (src, mt, da, hter, tags), got " +
                       std::to_string(cols.size()));
    }
    Example e;
    char id[32];
    std::snprintf(id, sizeof id, "row-%06zu", out.size());
    e.id = id;
    e.source = split_whitespace(cols[0]);
    e.target = split_whitespace(cols[1]);
    e.da = parse_number(cols[2], where);
    e.hter = parse_number(cols[3], where);
    auto tags = split_whitespace(cols[4]);
    if (options.strip_gap_tags && tags.size() == 2 * e.target.size() + 1) {
      std::vector<std::string> words;
      for (std::size_t i = 1; i < tags.size(); i += 2) words.push_back(tags[i]);
      tags = std::move(words);
    }
    try {
      for (const auto& t : tags) e.labels.push_back(parse_label(t));
      e.validate(options.strict_hter);
    } catch (const DataError& ex) {
      throw DataError(where + ": " + ex.what());
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

std::vector<Example> load_dataset(const std::filesystem::path& path, DatasetFormat format,
                                  const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open dataset '" + path.string() + "'");
  return format == DatasetFormat::jsonl ? load_jsonl(in, path.string(), options)
                                        : load_tsv(in, path.string(), options);
}

std::string serialize_jsonl(std::span<const Example> examples) {
  std::string out;
  for (const auto& e : examples) {
    out += example_to_json(e).dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, std::span<const Example> examples, DatasetFormat format) {
  if (format == DatasetFormat::jsonl) {
    write_file(path, serialize_jsonl(examples));
    return;
  }
  std::string out;
  for (const auto& e : examples) {
    std::vector<std::string> tags;
    for (Label l : e.labels) tags.emplace_back(label_name(l));
    out += join(e.source) + '\t' + join(e.target) + '\t' + (e.da ? format_number(*e.da) : "") + '\t' +
           (e.hter ? format_number(*e.hter) : "") + '\t' + join(tags) + '\n';
  }
  write_file(path, out);
}

void attach_logprobs(std::vector<Example>& examples, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open log-probability file '" + path.string() + "'");
  std::vector<std::pair<std::optional<std::string>, std::vector<double>>> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      std::optional<std::string> id;
      if (j.contains("id")) id = j["id"].get<std::string>();
      records.emplace_back(std::move(id), j.at("logprobs").get<std::vector<double>>());
    } catch (const json::exception& ex) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  const bool by_id = !records.empty() && records.front().first.has_value();
  if (!by_id && records.size() != examples.size()) {
    throw AlignmentError("log-probability file has " + std::to_string(records.size()) + " records for " +
                         std::to_string(examples.size()) + " examples");
  }
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < examples.size(); ++i) index.emplace(examples[i].id, i);
  for (std::size_t r = 0; r < records.size(); ++r) {
    std::size_t target = r;
    if (by_id) {
      if (!records[r].first) throw AlignmentError("log-probability record " + std::to_string(r) + " has no id");
      auto it = index.find(*records[r].first);
      if (it == index.end()) throw AlignmentError("log-probabilities for unknown example '" + *records[r].first + "'");
      target = it->second;
    }
    Example& e = examples[target];
    if (records[r].second.size() != e.target.size()) {
      throw DataError("example '" + e.id + "': " + std::to_string(records[r].second.size()) +
                      " log-probabilities for " + std::to_string(e.target.size()) + " words");
    }
    for (double v : records[r].second)
      if (!std::isfinite(v)) throw DataError("example '" + e.id + "': non-finite log-probability");
    e.logprobs = records[r].second;
  }
}

}  // namespace attriqe::corpus
