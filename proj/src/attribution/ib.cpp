#include <cmath>

#include "attriqe/attribution.hpp"
#include "attriqe/errors.hpp"

namespace attriqe::attr {

using ad::Graph;
using ad::Tensor;
using ad::Var;

nlohmann::json IbPrior::to_json() const {
  return {{"mean", mean}, {"stddev", stddev}, {"sentences", sentences}};
}

IbPrior IbPrior::from_json(const nlohmann::json& j) {
  try {
    IbPrior p;
    p.mean = j.at("mean").get<std::vector<std::vector<double>>>();
    p.stddev = j.at("stddev").get<std::vector<std::vector<double>>>();
    p.sentences = j.value("sentences", std::size_t{0});
    if (p.mean.size() != p.stddev.size()) throw ParseError("IB prior: mean and stddev disagree");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("IB prior: ") + e.what());
  }
}

template <typename T>
IbPrior estimate_ib_prior(const QeModel<T>& model, std::span<const EncodedInput> inputs) {
  if (inputs.empty()) throw DataError("IB prior needs at least one reference sentence");
  const std::size_t layers = model.config().layers + 1, d = model.config().d_model;
  std::vector<std::vector<double>> sum(layers, std::vector<double>(d, 0.0)), sq = sum;
  std::size_t rows = 0;
  for (const auto& in : inputs) {
    const auto trace = model.encode_and_predict(in);
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& h = trace.hidden[l];
      for (std::size_t i = 0; i < h.rows(); ++i)
        for (std::size_t j = 0; j < d; ++j) {
          const double v = static_cast<double>(h.at(i, j));
          sum[l][j] += v;
          sq[l][j] += v * v;
        }
    }
    rows += in.size();
  }
  IbPrior p;
  p.sentences = inputs.size();
  p.mean.assign(layers, std::vector<double>(d));
  p.stddev.assign(layers, std::vector<double>(d));
  const double n = static_cast<double>(rows);
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t j = 0; j < d; ++j) {
      const double m = sum[l][j] / n;
      p.mean[l][j] = m;
      p.stddev[l][j] = std::sqrt(std::max(sq[l][j] / n - m * m, 1e-12));
    }
  return p;
}

template <typename T>
IbResult information_bottleneck_core(const QeModel<T>& model, std::size_t layer, const Tensor<T>& hidden, T target,
                                     const IbPrior& prior, const IbOptions& options) {
  if (!prior.has_layer(layer)) throw StateError("no IB prior statistics for layer " + std::to_string(layer));
  const std::size_t n = hidden.rows(), d = hidden.cols();
  if (prior.mean[layer].size() != d) throw DimensionError("IB prior width does not match the hidden states");
  if (!(options.beta >= 0.0)) throw ContractError("IB beta must be non-negative");

  // Fixed noise draw, so the objective is a deterministic function of the logits.
  Rng rng(options.seed);
  Tensor<T> noise(hidden.shape());
  std::vector<double> r2(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double mu = prior.mean[layer][j], sd = prior.stddev[layer][j];
      noise.at(i, j) = static_cast<T>(mu + sd * standard_normal(rng));
      const double r = (static_cast<double>(hidden.at(i, j)) - mu) / sd;
      r2[i] += r * r;
    }
  Tensor<T> r2t({n});
  for (std::size_t i = 0; i < n; ++i) r2t[i] = static_cast<T>(r2[i]);

  std::vector<double> logits(n, options.init_logit), m(n, 0.0), v(n, 0.0);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const T beta = static_cast<T>(options.beta);
  const T half_d = static_cast<T>(0.5 * static_cast<double>(d));
  const T dd = static_cast<T>(d);

  IbResult result;
  auto evaluate = [&](bool want_grad, std::vector<double>* grad, std::vector<double>* capacity, double* pred) {
    Graph<T> g;
    const auto bound = model.bind(g, false);
    Tensor<T> lt({n});
    for (std::size_t i = 0; i < n; ++i) lt[i] = static_cast<T>(logits[i]);
    Var<T> lam = want_grad ? g.variable(std::move(lt)) : g.constant(std::move(lt));
    Var<T> alpha = ad::sigmoid(lam);
    Var<T> keep_out = ad::sigmoid(ad::scale(lam, T(-1)));  // 1 - alpha, computed stably
    Var<T> z = ad::add(ad::scale_rows(g.external(hidden, false), alpha), ad::scale_rows(g.external(noise, false), keep_out));
    Var<T> y = model.forward_from(bound, layer, z);
    Var<T> consistency = ad::square(ad::add_scalar(y, -target));
    // Per-token KL( N(alpha r, (1-alpha)^2) || N(0,1) ), summed over dimensions.
    Var<T> cap = ad::add(ad::add(ad::scale(ad::add_scalar(ad::square(keep_out), T(-1)), half_d),
                                 ad::scale(ad::log(keep_out), -dd)),
                         ad::scale(ad::mul(ad::square(alpha), g.constant(r2t)), T(0.5)));
    Var<T> objective = ad::add(ad::sum(consistency), ad::scale(ad::sum(cap), beta));
    const double value = static_cast<double>(objective.value()[0]);
    if (!std::isfinite(value)) throw NumericError("information bottleneck: objective diverged at layer " + std::to_string(layer));
    if (capacity) capacity->assign(cap.value().values().begin(), cap.value().values().end());
    if (pred) *pred = static_cast<double>(y.value()[0]);
    if (want_grad) {
      g.backward(objective);
      const auto& gl = g.grad(lam);
      grad->assign(gl.values().begin(), gl.values().end());
    }
    return value;
  };

  std::vector<double> grad;
  for (std::size_t step = 0; step < options.steps; ++step) {
    result.objective.push_back(evaluate(true, &grad, nullptr, nullptr));
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step + 1));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step + 1));
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      logits[i] -= options.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
  result.objective.push_back(evaluate(false, nullptr, &result.capacity, &result.noised_prediction));
  for (auto& c : result.capacity) c = std::max(c, 0.0);  // KL is non-negative; clamp rounding
  result.alpha.resize(n);
  for (std::size_t i = 0; i < n; ++i) result.alpha[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  result.prediction = static_cast<double>(target);
  return result;
}

template <typename T>
Attribution information_bottleneck(const QeModel<T>& model, const EncodedInput& input, const HiddenTrace<T>& trace,
                                   std::size_t layer, const IbPrior& prior, const IbOptions& options) {
  if (layer >= trace.hidden.size()) throw ContractError("layer " + std::to_string(layer) + " out of range");
  const auto r = information_bottleneck_core(model, layer, trace.hidden[layer], trace.prediction, prior, options);
  Attribution a;
  a.method = Method::ib;
  a.layer = layer;
  a.raw = r.capacity;
  a.meta = {{"beta", options.beta},
            {"steps", options.steps},
            {"learning_rate", options.learning_rate},
            {"init_logit", options.init_logit},
            {"seed", options.seed},
            {"objective", r.objective},
            {"noised_prediction", r.noised_prediction},
            {"prediction", static_cast<double>(trace.prediction)}};
  assign_word_scores(a, a.raw, input);
  return a;
}

template IbPrior estimate_ib_prior<float>(const QeModel<float>&, std::span<const EncodedInput>);
template IbPrior estimate_ib_prior<double>(const QeModel<double>&, std::span<const EncodedInput>);
template IbResult information_bottleneck_core<float>(const QeModel<float>&, std::size_t, const Tensor<float>&, float,
                                                     const IbPrior&, const IbOptions&);
template IbResult information_bottleneck_core<double>(const QeModel<double>&, std::size_t, const Tensor<double>&,
                                                      double, const IbPrior&, const IbOptions&);
template Attribution information_bottleneck<float>(const QeModel<float>&, const EncodedInput&,
                                                   const HiddenTrace<float>&, std::size_t, const IbPrior&,
                                                   const IbOptions&);
template Attribution information_bottleneck<double>(const QeModel<double>&, const EncodedInput&,
                                                    const HiddenTrace<double>&, std::size_t, const IbPrior&,
                                                    const IbOptions&);

}  // namespace attriqe::attr
