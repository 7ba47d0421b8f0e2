#include <cmath>

#include "attriqe/attribution.hpp"
#include "attriqe/errors.hpp"

namespace attriqe::attr {

template <typename T>
HiddenFunction<T> HiddenFunction<T>::from_model(const QeModel<T>& model, std::size_t layer) {
  HiddenFunction<T> f;
  f.value = [&model, layer](const ad::Tensor<T>& h) { return model.predict_from_hidden(layer, h); };
  f.gradient = [&model, layer](const ad::Tensor<T>& h) { return model.gradient_from_hidden(layer, h); };
  return f;
}

template <typename T>
IgResult integrated_gradients_core(const HiddenFunction<T>& f, const ad::Tensor<T>& hidden, const IgOptions& options,
                                   std::size_t layer) {
  if (options.steps < 1) throw ContractError("integrated gradients needs at least one step");
  if (hidden.rank() != 2) throw DimensionError("integrated gradients expects an n x d hidden matrix");
  const std::size_t n = hidden.rows(), d = hidden.cols();

  std::vector<double> mean_grad(hidden.size(), 0.0);
  ad::Tensor<T> point(hidden.shape());
  for (std::size_t k = 0; k < options.steps; ++k) {
    const double alpha = (static_cast<double>(k) + 0.5) / static_cast<double>(options.steps);
    for (std::size_t i = 0; i < hidden.size(); ++i) point[i] = static_cast<T>(alpha * static_cast<double>(hidden[i]));
    const auto [value, grad] = f.gradient(point);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      if (!std::isfinite(g)) {
        throw NumericError("integrated gradients: non-finite gradient at layer " + std::to_string(layer) +
                           ", step " + std::to_string(k));
      }
      mean_grad[i] += g;
    }
  }
  for (auto& g : mean_grad) g /= static_cast<double>(options.steps);

  IgResult r;
  r.scores.assign(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double signed_sum = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = static_cast<double>(hidden.at(i, j)) * mean_grad[i * d + j];
      signed_sum += c;
      sq += c * c;
    }
    total += signed_sum;
    r.scores[i] = options.l2_norm ? std::sqrt(sq) : signed_sum;
  }
  r.f_input = static_cast<double>(f.value(hidden));
  r.f_baseline = static_cast<double>(f.value(ad::Tensor<T>(hidden.shape())));
  r.residual = std::abs(total - (r.f_input - r.f_baseline));
  return r;
}

template <typename T>
Attribution integrated_gradients(const QeModel<T>& model, const EncodedInput& input, const HiddenTrace<T>& trace,
                                 std::size_t layer, const IgOptions& options) {
  if (layer >= trace.hidden.size()) {
    throw ContractError("layer " + std::to_string(layer) + " outside 0.." + std::to_string(trace.hidden.size() - 1));
  }
  const auto r = integrated_gradients_core(HiddenFunction<T>::from_model(model, layer), trace.hidden[layer], options,
                                           layer);
  Attribution a;
  a.method = Method::ig;
  a.layer = layer;
  a.raw = r.scores;
  a.meta = {{"steps", options.steps},
            {"reduction", options.l2_norm ? "l2" : "sum"},
            {"f_input", r.f_input},
            {"f_baseline", r.f_baseline},
            {"completeness_residual", r.residual},
            {"prediction", static_cast<double>(trace.prediction)}};
  assign_word_scores(a, orient(a.raw, Method::ig, model.config().orientation), input);
  return a;
}

template struct HiddenFunction<float>;
template struct HiddenFunction<double>;
template IgResult integrated_gradients_core<float>(const HiddenFunction<float>&, const ad::Tensor<float>&,
                                                   const IgOptions&, std::size_t);
template IgResult integrated_gradients_core<double>(const HiddenFunction<double>&, const ad::Tensor<double>&,
                                                    const IgOptions&, std::size_t);
template Attribution integrated_gradients<float>(const QeModel<float>&, const EncodedInput&, const HiddenTrace<float>&,
                                                 std::size_t, const IgOptions&);
template Attribution integrated_gradients<double>(const QeModel<double>&, const EncodedInput&,
                                                  const HiddenTrace<double>&, std::size_t, const IgOptions&);

}  // namespace attriqe::attr
