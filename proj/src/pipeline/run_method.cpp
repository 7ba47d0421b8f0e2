#include "attriqe/errors.hpp"
#include "attriqe/pipeline.hpp"

namespace attriqe::pipeline {

namespace {

// Stream tags for instance seeds of methods without a layer.
constexpr std::uint64_t kLimeTag = 0x11e0;
constexpr std::uint64_t kRandomTag = 0x7a7d;

std::uint64_t instance_seed(std::uint64_t base, const std::string& id, std::uint64_t tag) {
  return derive_seed(base, fnv1a(id), tag);
}

}  // namespace

std::vector<attr::Attribution> run_random(std::span<const corpus::Example> examples, std::uint64_t seed) {
  std::vector<attr::Attribution> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    Rng rng(instance_seed(seed, e.id, kRandomTag));
    out.push_back(attr::random_scores(e, rng));
  }
  return out;
}

std::vector<attr::Attribution> run_glassbox(std::span<const corpus::Example> examples) {
  std::vector<attr::Attribution> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(attr::glassbox_scores(e));
  return out;
}

template <typename T>
std::map<std::optional<std::size_t>, std::vector<attr::Attribution>> run_method(
    const QeModel<T>& model, const corpus::Vocabulary& vocab, std::span<const corpus::Example> examples,
    attr::Method method, const std::vector<std::size_t>& layers, const MethodContext& ctx,
    const QeModel<T>* word_model) {
  using attr::Method;
  std::map<std::optional<std::size_t>, std::vector<attr::Attribution>> out;
  const std::size_t n = examples.size();

  switch (method) {
    case Method::random:
      out[std::nullopt] = run_random(examples, ctx.seed);
      return out;
    case Method::glassbox:
      out[std::nullopt] = run_glassbox(examples);
      return out;
    case Method::external:
      throw ConfigError("external attributions are read from a dump, not computed");
    default:
      break;
  }

  if (method == Method::supervised || method == Method::lime) {
    if (method == Method::supervised && word_model == nullptr) {
      throw ConfigError("the supervised baseline needs a trained word model");
    }
    auto& dump = out[std::nullopt];
    dump.resize(n);
    parallel_for(n, ctx.workers, [&](std::size_t i) {
      const auto& e = examples[i];
      if (method == Method::supervised) {
        dump[i] = attr::supervised_scores(*word_model, vocab, e);
      } else {
        attr::LimeOptions o = ctx.lime;
        o.seed = instance_seed(ctx.seed, e.id, kLimeTag);
        dump[i] = attr::lime(model, vocab.encode(e.source, e.target), o);
      }
      dump[i].id = e.id;
      dump[i].validate();
    });
    return out;
  }

  if (layers.empty()) throw ConfigError("no layers requested for " + std::string(attr::method_name(method)));
  if (method == Method::ib && ctx.prior == nullptr) throw ContractError("IB attribution needs a prior");
  for (std::size_t layer : layers) {
    if (layer > model.config().layers || (method == Method::attention && layer == 0)) {
      throw ConfigError("layer " + std::to_string(layer) + " is not available for " +
                        std::string(attr::method_name(method)));
    }
    out[layer].resize(n);
  }

  parallel_for(n, ctx.workers, [&](std::size_t i) {
    const auto& e = examples[i];
    const EncodedInput input = vocab.encode(e.source, e.target);
    const HiddenTrace<T> trace = model.encode_and_predict(input);
    for (std::size_t layer : layers) {
      attr::Attribution a;
      switch (method) {
        case Method::ig:
          a = attr::integrated_gradients(model, input, trace, layer, ctx.ig);
          break;
        case Method::ib: {
          attr::IbOptions o = ctx.ib;
          o.seed = instance_seed(ctx.seed, e.id, layer);
          a = attr::information_bottleneck(model, input, trace, layer, *ctx.prior, o);
          break;
        }
        default:
          a = attr::attention_attribution(input, trace, layer, ctx.attention_cls_row);
          break;
      }
      a.id = e.id;
      a.validate();
      out.at(layer)[i] = std::move(a);
    }
  });
  return out;
}

template std::map<std::optional<std::size_t>, std::vector<attr::Attribution>> run_method<float>(
    const QeModel<float>&, const corpus::Vocabulary&, std::span<const corpus::Example>, attr::Method,
    const std::vector<std::size_t>&, const MethodContext&, const QeModel<float>*);
template std::map<std::optional<std::size_t>, std::vector<attr::Attribution>> run_method<double>(
    const QeModel<double>&, const corpus::Vocabulary&, std::span<const corpus::Example>, attr::Method,
    const std::vector<std::size_t>&, const MethodContext&, const QeModel<double>*);

}  // namespace attriqe::pipeline
