#include <cmath>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "attriqe/attribution.hpp"
#include "attriqe/errors.hpp"

namespace attriqe::attr {

LimeResult lime_core(std::size_t features, const std::function<double(const std::vector<bool>&)>& predict,
                     const LimeOptions& options) {
  if (options.samples < 10) throw ContractError("LIME needs at least 10 samples");
  if (features == 0) throw ContractError("LIME needs at least one feature");
  if (!(options.kernel_width > 0.0)) throw ContractError("LIME kernel width must be positive");

  Rng rng(options.seed);
  const std::size_t n = options.samples;
  Eigen::MatrixXd x(n, features);
  Eigen::VectorXd y(n), w(n);
  std::vector<std::size_t> perm(features);
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<bool> keep(features, true);
    if (s > 0) {
      // Mask a uniformly sized random subset of the features.
      const std::size_t masked = 1 + uniform_index(rng, features);
      for (std::size_t i = 0; i < features; ++i) perm[i] = i;
      for (std::size_t i = 0; i < masked; ++i) {
        std::swap(perm[i], perm[i + uniform_index(rng, features - i)]);
        keep[perm[i]] = false;
      }
    }
    std::size_t kept = 0;
    for (std::size_t i = 0; i < features; ++i) {
      x(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = keep[i] ? 1.0 : 0.0;
      kept += keep[i];
    }
    // Cosine distance to the all-kept vector, scaled to [0, 100].
    const double cosine = kept == 0 ? 0.0 : std::sqrt(static_cast<double>(kept) / static_cast<double>(features));
    const double dist = 100.0 * (1.0 - cosine);
    w(static_cast<Eigen::Index>(s)) = std::sqrt(std::exp(-dist * dist / (options.kernel_width * options.kernel_width)));
    const double out = predict(keep);
    if (!std::isfinite(out)) throw NumericError("LIME: model output is not finite");
    y(static_cast<Eigen::Index>(s)) = out;
  }

  // Weighted ridge with an unpenalized intercept: centre by the weighted means.
  const double wsum = w.sum();
  const Eigen::RowVectorXd xmean = (w.asDiagonal() * x).colwise().sum() / wsum;
  const double ymean = w.dot(y) / wsum;
  const Eigen::MatrixXd xc = x.rowwise() - xmean;
  const Eigen::VectorXd yc = y.array() - ymean;
  const Eigen::MatrixXd gram = xc.transpose() * w.asDiagonal() * xc;
  const Eigen::VectorXd rhs = xc.transpose() * w.asDiagonal() * yc;

  LimeResult r;
  double ridge = options.ridge;
  for (int attempt = 0; attempt < 12; ++attempt) {
    Eigen::MatrixXd a = gram;
    a.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    Eigen::VectorXd beta;
    bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive();
    if (ok) {
      beta = ldlt.solve(rhs);
      ok = beta.allFinite() && ldlt.rcond() > 1e-12;
    }
    if (ok) {
      r.coefficients.assign(beta.data(), beta.data() + beta.size());
      r.intercept = ymean - xmean.dot(beta);
      r.ridge_used = ridge;
      return r;
    }
    spdlog::warn("LIME: ridge system singular at strength {}, retrying with {}", ridge, ridge * 10.0);
    ridge = ridge > 0.0 ? ridge * 10.0 : 1e-6;
  }
  throw NumericError("LIME: ridge system stayed singular");
}

EncodedInput mask_words(const EncodedInput& input, const std::vector<bool>& keep) {
  if (keep.size() != input.source_words + input.target_words) {
    throw DimensionError("mask_words: keep vector does not cover every word");
  }
  EncodedInput out = input;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const auto& span = input.spans[i];
    if (!span) continue;
    const std::size_t f = span->side == Side::source ? span->word : input.source_words + span->word;
    if (!keep[f]) out.ids[i] = special::mask;
  }
  return out;
}

template <typename T>
Attribution lime(const QeModel<T>& model, const EncodedInput& input, const LimeOptions& options) {
  const std::size_t features = input.source_words + input.target_words;
  const auto r = lime_core(
      features,
      [&](const std::vector<bool>& keep) { return static_cast<double>(model.predict(mask_words(input, keep))); },
      options);
  Attribution a;
  a.method = Method::lime;
  a.raw.assign(input.size(), 0.0);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const auto& span = input.spans[i];
    if (!span) continue;
    a.raw[i] = r.coefficients[span->side == Side::source ? span->word : input.source_words + span->word];
  }
  a.meta = {{"samples", options.samples},
            {"kernel_width", options.kernel_width},
            {"ridge", r.ridge_used},
            {"seed", options.seed},
            {"intercept", r.intercept},
            {"prediction", static_cast<double>(model.predict(input))}};
  assign_word_scores(a, orient(a.raw, Method::lime, model.config().orientation), input);
  return a;
}

template Attribution lime<float>(const QeModel<float>&, const EncodedInput&, const LimeOptions&);
template Attribution lime<double>(const QeModel<double>&, const EncodedInput&, const LimeOptions&);

}  // namespace attriqe::attr
