#include "attriqe/model.hpp"

#include <cmath>

#include "attriqe/errors.hpp"

namespace attriqe {

using ad::Graph;
using ad::Tensor;
using ad::Var;

std::string_view head_kind_name(HeadKind k) noexcept {
  switch (k) {
    case HeadKind::regression: return "regression";
    case HeadKind::binary: return "binary";
    case HeadKind::token: return "token";
  }
  return "?";
}

HeadKind parse_head_kind(std::string_view name) {
  if (name == "regression") return HeadKind::regression;
  if (name == "binary") return HeadKind::binary;
  if (name == "token") return HeadKind::token;
  throw ConfigError("unknown head kind '" + std::string(name) + "'");
}

std::string_view orientation_name(Orientation o) noexcept {
  return o == Orientation::higher_is_better ? "higher_is_better" : "higher_is_worse";
}

Orientation parse_orientation(std::string_view name) {
  if (name == "higher_is_better") return Orientation::higher_is_better;
  if (name == "higher_is_worse") return Orientation::higher_is_worse;
  throw ConfigError("unknown score orientation '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (layers < 1 || d_model < 1 || heads < 1 || ff < 1 || max_len < 3) fail("all sizes must be positive");
  if (vocab_size <= static_cast<std::size_t>(special::count)) fail("vocabulary size must exceed the special tokens");
  if (d_model % heads != 0) fail("d_model must be divisible by heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0,1)");
  if (!(ln_epsilon > 0.0)) fail("layer-norm epsilon must be positive");
  if (!(init_std > 0.0)) fail("init_std must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"layers", layers},
          {"d_model", d_model},
          {"heads", heads},
          {"ff", ff},
          {"vocab_size", vocab_size},
          {"max_len", max_len},
          {"head", head_kind_name(head)},
          {"dropout", dropout},
          {"orientation", orientation_name(orientation)},
          {"activation", activation == Activation::gelu ? "gelu" : "relu"},
          {"segment_embeddings", segment_embeddings},
          {"segment_positions", segment_positions},
          {"ln_epsilon", ln_epsilon},
          {"init_std", init_std}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.layers = j.value("layers", c.layers);
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.ff = j.value("ff", c.ff);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_len = j.value("max_len", c.max_len);
    if (j.contains("head")) c.head = parse_head_kind(j["head"].get<std::string>());
    c.dropout = j.value("dropout", c.dropout);
    if (j.contains("orientation")) c.orientation = parse_orientation(j["orientation"].get<std::string>());
    if (j.contains("activation")) {
      const auto a = j["activation"].get<std::string>();
      if (a == "gelu") c.activation = Activation::gelu;
      else if (a == "relu") c.activation = Activation::relu;
      else throw ConfigError("unknown activation '" + a + "'");
    }
    c.segment_embeddings = j.value("segment_embeddings", c.segment_embeddings);
    c.segment_positions = j.value("segment_positions", c.segment_positions);
    c.ln_epsilon = j.value("ln_epsilon", c.ln_epsilon);
    c.init_std = j.value("init_std", c.init_std);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

namespace {

enum LayerSlot { wqkv, bqkv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b };
enum HeadSlot { hw1, hb1, hw2, hb2 };

template <typename T>
Tensor<T> normal_tensor(ad::Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(stddev * standard_normal(rng));
  return t;
}

template <typename T>
Var<T> dropout(Var<T> x, double p, Rng* rng) {
  if (!rng || p <= 0.0) return x;
  Tensor<T> mask(x.shape());
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask.values()) m = uniform01(*rng) < p ? T(0) : keep;
  return ad::mul(x, x.graph().constant(std::move(mask)));
}

}  // namespace

template <typename T>
QeModel<T>::QeModel(ModelConfig config, ad::ParameterSet<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const std::size_t expected = 5 + config_.layers * 12 + 4;
  if (params_.size() != expected) {
    throw DataError("model needs " + std::to_string(expected) + " parameter tensors, got " +
                    std::to_string(params_.size()));
  }
  const std::size_t d = config_.d_model;
  auto expect = [&](std::size_t i, const ad::Shape& s) {
    if (params_[i].shape() != s) {
      throw DimensionError("parameter '" + params_.name(i) + "' has shape " + ad::to_string(params_[i].shape()) +
                           ", expected " + ad::to_string(s));
    }
  };
  expect(0, {config_.vocab_size, d});
  expect(1, {config_.max_len, d});
  expect(2, {3, d});
  for (std::size_t l = 1; l <= config_.layers; ++l) {
    expect(param_index(l, wqkv), {d, 3 * d});
    expect(param_index(l, w1), {d, config_.ff});
    expect(param_index(l, w2), {config_.ff, d});
  }
  expect(head_index(hw1), {d, d});
  expect(head_index(hw2), {d, 1});
}

template <typename T>
QeModel<T> QeModel<T>::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.d_model, ff = config.ff;
  const double s = config.init_std;
  ad::ParameterSet<T> p;
  p.add("embed.token", normal_tensor<T>({config.vocab_size, d}, s, rng));
  p.add("embed.position", normal_tensor<T>({config.max_len, d}, s, rng));
  p.add("embed.segment", config.segment_embeddings ? normal_tensor<T>({3, d}, s, rng) : Tensor<T>({3, d}));
  p.add("embed.ln.gain", Tensor<T>({d}, T(1)));
  p.add("embed.ln.bias", Tensor<T>({d}));
  for (std::size_t l = 1; l <= config.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    p.add(pre + "attn.wqkv", normal_tensor<T>({d, 3 * d}, s, rng));
    p.add(pre + "attn.bqkv", Tensor<T>({3 * d}));
    p.add(pre + "attn.wo", normal_tensor<T>({d, d}, s, rng));
    p.add(pre + "attn.bo", Tensor<T>({d}));
    p.add(pre + "ln1.gain", Tensor<T>({d}, T(1)));
    p.add(pre + "ln1.bias", Tensor<T>({d}));
    p.add(pre + "ff.w1", normal_tensor<T>({d, ff}, s, rng));
    p.add(pre + "ff.b1", Tensor<T>({ff}));
    p.add(pre + "ff.w2", normal_tensor<T>({ff, d}, s, rng));
    p.add(pre + "ff.b2", Tensor<T>({d}));
    p.add(pre + "ln2.gain", Tensor<T>({d}, T(1)));
    p.add(pre + "ln2.bias", Tensor<T>({d}));
  }
  p.add("head.w1", normal_tensor<T>({d, d}, s, rng));
  p.add("head.b1", Tensor<T>({d}));
  p.add("head.w2", normal_tensor<T>({d, 1}, s, rng));
  p.add("head.b2", Tensor<T>({1}));
  return QeModel(config, std::move(p));
}

template <typename T>
typename QeModel<T>::Bound QeModel<T>::bind(Graph<T>& g, bool requires_grad) const {
  Bound b;
  b.p.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) b.p.push_back(g.external(params_[i], requires_grad));
  return b;
}

template <typename T>
void QeModel<T>::check_input(const EncodedInput& input) const {
  if (input.size() > config_.max_len) {
    throw LengthError("input of " + std::to_string(input.size()) + " tokens exceeds the maximum length " +
                      std::to_string(config_.max_len));
  }
  if (input.size() == 0 || input.segments.size() != input.size()) {
    throw ContractError("malformed encoded input");
  }
  for (auto id : input.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw VocabularyError("token id " + std::to_string(id) + " outside the model vocabulary of " +
                            std::to_string(config_.vocab_size));
    }
  }
}

template <typename T>
Var<T> QeModel<T>::embed(const Bound& b, const EncodedInput& input, Rng* dropout_rng) const {
  check_input(input);
  const std::size_t n = input.size();
  std::vector<std::int32_t> positions(n), segments(n);
  // With segment positions the target restarts its count after the first
  // [SEP], so word j of either side sees the same position embedding.
  std::int32_t next = 0;
  bool restarted = false;
  for (std::size_t i = 0; i < n; ++i) {
    positions[i] = next++;
    segments[i] = static_cast<std::int32_t>(input.segments[i]);
    if (config_.segment_positions && !restarted && input.ids[i] == special::sep) {
      next = 1;
      restarted = true;
    }
  }
  Var<T> x = ad::add(ad::embedding(b.p[0], std::span<const std::int32_t>(input.ids)),
                     ad::embedding(b.p[1], std::span<const std::int32_t>(positions)));
  if (config_.segment_embeddings) x = ad::add(x, ad::embedding(b.p[2], std::span<const std::int32_t>(segments)));
  x = ad::layer_norm(x, b.p[3], b.p[4], static_cast<T>(config_.ln_epsilon));
  return dropout(x, config_.dropout, dropout_rng);
}

template <typename T>
Var<T> QeModel<T>::block(const Bound& b, std::size_t layer, Var<T> x, Rng* dropout_rng,
                         std::vector<Tensor<T>>* attention) const {
  const std::size_t d = config_.d_model, h = config_.heads, dk = d / h;
  auto P = [&](LayerSlot s) { return b.p[param_index(layer, s)]; };
  const T eps = static_cast<T>(config_.ln_epsilon);
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));

  Var<T> qkv = ad::add_bias(ad::matmul(x, P(wqkv)), P(bqkv));
  std::vector<Var<T>> heads;
  heads.reserve(h);
  for (std::size_t k = 0; k < h; ++k) {
    Var<T> q = ad::slice_cols(qkv, k * dk, dk);
    Var<T> kk = ad::slice_cols(qkv, d + k * dk, dk);
    Var<T> v = ad::slice_cols(qkv, 2 * d + k * dk, dk);
    Var<T> probs = ad::softmax(ad::scale(ad::matmul(q, ad::transpose(kk)), inv_sqrt), 1);
    if (attention) attention->push_back(probs.value());
    heads.push_back(ad::matmul(probs, v));
  }
  Var<T> attn = ad::add_bias(ad::matmul(ad::concat_cols<T>(heads), P(wo)), P(bo));
  attn = dropout(attn, config_.dropout, dropout_rng);
  Var<T> x1 = ad::layer_norm(ad::add(x, attn), P(ln1_g), P(ln1_b), eps);

  Var<T> hidden = ad::add_bias(ad::matmul(x1, P(w1)), P(b1));
  hidden = config_.activation == Activation::gelu ? ad::gelu(hidden) : ad::relu(hidden);
  Var<T> ffo = ad::add_bias(ad::matmul(hidden, P(w2)), P(b2));
  ffo = dropout(ffo, config_.dropout, dropout_rng);
  return ad::layer_norm(ad::add(x1, ffo), P(ln2_g), P(ln2_b), eps);
}

template <typename T>
Var<T> QeModel<T>::head_logits(const Bound& b, Var<T> top) const {
  Var<T> in = config_.head == HeadKind::token ? top : ad::slice_rows(top, 0, 1);
  Var<T> z = ad::tanh(ad::add_bias(ad::matmul(in, b.p[head_index(hw1)]), b.p[head_index(hb1)]));
  Var<T> out = ad::add_bias(ad::matmul(z, b.p[head_index(hw2)]), b.p[head_index(hb2)]);
  return ad::reshape(out, {out.value().size()});
}

template <typename T>
Var<T> QeModel<T>::link(Var<T> logits) const {
  return config_.head == HeadKind::regression ? logits : ad::sigmoid(logits);
}

template <typename T>
Var<T> QeModel<T>::forward_logits(const Bound& b, const EncodedInput& input, const ForwardOptions& opt) const {
  Var<T> x = embed(b, input, opt.dropout_rng);
  if (opt.trace) {
    opt.trace->hidden.clear();
    opt.trace->attention.clear();
    opt.trace->hidden.push_back(x.value());
  }
  for (std::size_t l = 1; l <= config_.layers; ++l) {
    std::vector<Tensor<T>>* att = nullptr;
    if (opt.trace) att = &opt.trace->attention.emplace_back();
    x = block(b, l, x, opt.dropout_rng, att);
    if (opt.trace) opt.trace->hidden.push_back(x.value());
  }
  return head_logits(b, x);
}

template <typename T>
Var<T> QeModel<T>::forward_from(const Bound& b, std::size_t layer, Var<T> hidden) const {
  if (layer > config_.layers) {
    throw ContractError("layer " + std::to_string(layer) + " outside 0.." + std::to_string(config_.layers));
  }
  Var<T> x = hidden;
  for (std::size_t l = layer + 1; l <= config_.layers; ++l) x = block(b, l, x);
  return link(head_logits(b, x));
}

template <typename T>
HiddenTrace<T> QeModel<T>::encode_and_predict(const EncodedInput& input) const {
  Graph<T> g;
  const Bound b = bind(g, false);
  HiddenTrace<T> trace;
  Var<T> out = link(forward_logits(b, input, {nullptr, &trace}));
  if (config_.head == HeadKind::token) {
    trace.token_probabilities.assign(out.value().values().begin(), out.value().values().end());
  } else {
    trace.prediction = out.value()[0];
  }
  return trace;
}

template <typename T>
T QeModel<T>::predict(const EncodedInput& input) const {
  if (config_.head == HeadKind::token) throw ContractError("predict() needs a sentence-level head");
  Graph<T> g;
  const Bound b = bind(g, false);
  return link(forward_logits(b, input, {})).value()[0];
}

template <typename T>
void QeModel<T>::check_hidden(std::size_t layer, const Tensor<T>& hidden) const {
  if (config_.head == HeadKind::token) throw ContractError("hidden-state prediction needs a sentence-level head");
  if (layer > config_.layers) {
    throw ContractError("layer " + std::to_string(layer) + " outside 0.." + std::to_string(config_.layers));
  }
  if (hidden.rank() != 2 || hidden.cols() != config_.d_model || hidden.rows() == 0 ||
      hidden.rows() > config_.max_len) {
    throw DimensionError("hidden states of shape " + ad::to_string(hidden.shape()) + " do not fit a width-" +
                         std::to_string(config_.d_model) + " model");
  }
}

template <typename T>
T QeModel<T>::predict_from_hidden(std::size_t layer, const Tensor<T>& hidden) const {
  check_hidden(layer, hidden);
  Graph<T> g;
  const Bound b = bind(g, false);
  return forward_from(b, layer, g.external(hidden, false)).value()[0];
}

template <typename T>
std::pair<T, Tensor<T>> QeModel<T>::gradient_from_hidden(std::size_t layer, const Tensor<T>& hidden) const {
  check_hidden(layer, hidden);
  Graph<T> g;
  const Bound b = bind(g, false);
  Var<T> h = g.external(hidden, true);
  Var<T> out = forward_from(b, layer, h);
  g.backward(out);
  return {out.value()[0], g.grad(h)};
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: lengths differ");
  if (x.size() < 2) throw NumericError("pearson: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw NumericError("pearson: correlation undefined for zero variance");
  return sxy / std::sqrt(sxx * syy);
}

template <typename T>
void save_model(const std::filesystem::path& dir, const QeModel<T>& model, const corpus::Vocabulary& vocab,
                const nlohmann::json& extra) {
  if (vocab.size() != model.config().vocab_size) {
    throw ContractError("model vocabulary size does not match the vocabulary being saved");
  }
  std::filesystem::create_directories(dir);
  ad::save_checkpoint(dir / "model.ckpt", model.parameters());
  vocab.save(dir / "vocab.json");
  nlohmann::json meta;
  meta["config"] = model.config().to_json();
  meta["vocab_hash"] = hex64(vocab.hash());
  meta["orientation"] = orientation_name(model.config().orientation);
  meta["parameter_checksum"] = hex64(model.parameters().checksum());
  meta["precision"] = ad::precision_tag(ad::precision_of<T>());
  if (!extra.is_null()) meta["extra"] = extra;
  write_file(dir / "model.json", meta.dump(2) + "\n");
}

template <typename T>
LoadedModel<T> load_model(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw PathError("model directory '" + dir.string() + "' not found");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(dir / "model.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("model.json: " + std::string(e.what()));
  }
  ModelConfig config = ModelConfig::from_json(meta.at("config"));
  if (meta.contains("orientation")) config.orientation = parse_orientation(meta["orientation"].get<std::string>());
  corpus::Vocabulary vocab = corpus::Vocabulary::load(dir / "vocab.json");
  if (meta.contains("vocab_hash") && meta["vocab_hash"].get<std::string>() != hex64(vocab.hash())) {
    throw DataError("vocabulary in '" + dir.string() + "' does not match the model's vocabulary hash");
  }
  auto params = ad::load_checkpoint<T>(dir / "model.ckpt");
  return {QeModel<T>(config, std::move(params)), std::move(vocab), meta};
}

template class QeModel<float>;
template class QeModel<double>;
template void save_model<float>(const std::filesystem::path&, const QeModel<float>&, const corpus::Vocabulary&,
                                const nlohmann::json&);
template void save_model<double>(const std::filesystem::path&, const QeModel<double>&, const corpus::Vocabulary&,
                                 const nlohmann::json&);
template LoadedModel<float> load_model<float>(const std::filesystem::path&);
template LoadedModel<double> load_model<double>(const std::filesystem::path&);

}  // namespace attriqe
