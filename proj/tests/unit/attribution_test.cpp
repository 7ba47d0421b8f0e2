#include <cmath>
#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "attriqe/attribution.hpp"
#include "attriqe/errors.hpp"

namespace attriqe::attr {
namespace {

using ad::Tensor;

ModelConfig small_config(Orientation o = Orientation::higher_is_worse) {
  ModelConfig c;
  c.layers = 3;
  c.d_model = 16;
  c.heads = 2;
  c.ff = 24;
  c.vocab_size = 30;
  c.max_len = 32;
  c.dropout = 0.0;
  c.init_std = 0.2;
  c.head = o == Orientation::higher_is_better ? HeadKind::regression : HeadKind::binary;
  c.orientation = o;
  return c;
}

corpus::Vocabulary small_vocab() {
  corpus::Example e;
  e.source = {"a", "b", "c", "d", "e"};
  e.target = {"v", "w", "x", "y", "z"};
  return corpus::Vocabulary::build(std::span<const corpus::Example>(&e, 1), {});
}

EncodedInput sample_input(const corpus::Vocabulary& v) {
  const std::vector<std::string> src = {"a", "c", "e", "b"}, tgt = {"z", "v", "x"};
  return v.encode(src, tgt);
}

// ---- integrated gradients ---------------------------------------------------------

HiddenFunction<double> from_lambda(std::function<double(const Tensor<double>&)> value,
                                   std::function<Tensor<double>(const Tensor<double>&)> grad) {
  HiddenFunction<double> f;
  f.value = value;
  f.gradient = [value, grad](const Tensor<double>& h) { return std::make_pair(value(h), grad(h)); };
  return f;
}

TEST(IntegratedGradients, LinearFunctionIsExact) {
  Rng rng(3);
  Tensor<double> w({3, 4}), h({3, 4});
  for (auto& v : w.storage()) v = uniform01(rng) - 0.5;
  for (auto& v : h.storage()) v = uniform01(rng) - 0.5;
  auto f = from_lambda(
      [w](const Tensor<double>& x) {
        double s = 1.5;
        for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * x[i];
        return s;
      },
      [w](const Tensor<double>&) { return w; });
  const auto r = integrated_gradients_core(f, h, {.steps = 1});
  for (std::size_t row = 0; row < 3; ++row) {
    double want = 0.0;
    for (std::size_t c = 0; c < 4; ++c) want += h.at(row, c) * w.at(row, c);
    EXPECT_NEAR(r.scores[row], want, 1e-12);
  }
  EXPECT_NEAR(r.residual, 0.0, 1e-12);
  EXPECT_NEAR(r.f_baseline, 1.5, 1e-12);
}

TEST(IntegratedGradients, MidpointRuleIsExactForQuadratics) {
  // F(H) = (sum H)^2 has a gradient linear along the path.
  Tensor<double> h({2, 3}, {0.3, -0.1, 0.7, 0.2, 0.5, -0.4});
  auto f = from_lambda(
      [](const Tensor<double>& x) {
        const double s = std::accumulate(x.storage().begin(), x.storage().end(), 0.0);
        return s * s;
      },
      [](const Tensor<double>& x) {
        const double s = std::accumulate(x.storage().begin(), x.storage().end(), 0.0);
        return Tensor<double>(x.shape(), std::vector<double>(x.size(), 2.0 * s));
      });
  for (std::size_t m : {1u, 2u, 7u}) EXPECT_NEAR(integrated_gradients_core(f, h, {.steps = m}).residual, 0.0, 1e-12);
  // Rows: each gets (row sum) * 2 * 0.5 * total = row sum * total.
  const auto r = integrated_gradients_core(f, h, {.steps = 4});
  EXPECT_NEAR(r.scores[0], 0.9 * 1.2, 1e-12);
  EXPECT_NEAR(r.scores[1], 0.3 * 1.2, 1e-12);
  const auto l2 = integrated_gradients_core(f, h, {.steps = 4, .l2_norm = true});
  EXPECT_GE(l2.scores[0], std::abs(r.scores[0]) / std::sqrt(3.0) - 1e-12);
}

TEST(IntegratedGradients, CompletenessImprovesWithSteps) {
  const auto vocab = small_vocab();
  auto model = QeModel<double>::initialize(small_config(), 4);
  // Fresh biases are zero, which puts every post-norm block next to the
  // singular point of layer norm at the zero baseline. Trained models are not
  // like that, so give the biases values of their own.
  Rng rng(7);
  auto& params = model.mutable_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name(i);
    if (name.ends_with("bias") || name.find(".b") != std::string::npos)
      for (auto& v : params[i].storage()) v = 0.4 * (uniform01(rng) - 0.5);
  }
  const auto input = sample_input(vocab);
  const auto trace = model.encode_and_predict(input);
  for (std::size_t layer = 0; layer <= 3; ++layer) {
    const auto f = HiddenFunction<double>::from_model(model, layer);
    const auto coarse = integrated_gradients_core(f, trace.hidden[layer], {.steps = 8});
    const auto fine = integrated_gradients_core(f, trace.hidden[layer], {.steps = 256});
    const double gap = std::abs(fine.f_input - fine.f_baseline);
    EXPECT_LE(fine.residual, 0.01 * gap + 1e-12) << "layer " << layer;
    EXPECT_LE(fine.residual, coarse.residual + 1e-12) << "layer " << layer;
    EXPECT_NEAR(fine.f_input, trace.prediction, 1e-12);
  }
}

TEST(IntegratedGradients, OrientationFlipsForHigherIsBetter) {
  const auto vocab = small_vocab();
  const auto input = sample_input(vocab);
  const auto worse = QeModel<double>::initialize(small_config(Orientation::higher_is_worse), 2);
  ModelConfig better_cfg = small_config(Orientation::higher_is_better);
  better_cfg.head = HeadKind::binary;  // same function, other orientation
  const QeModel<double> better(better_cfg, worse.parameters());
  const auto tw = worse.encode_and_predict(input), tb = better.encode_and_predict(input);
  const auto a = integrated_gradients(worse, input, tw, 2, {});
  const auto b = integrated_gradients(better, input, tb, 2, {});
  ASSERT_EQ(a.target_scores.size(), 3u);
  // With one token per word the word score is the position score.
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.target_scores[i], -b.target_scores[i], 1e-12);
  EXPECT_EQ(a.raw, b.raw);
  EXPECT_EQ(a.source_scores.size(), 4u);
  EXPECT_TRUE(a.meta.contains("completeness_residual"));
}

// ---- information bottleneck -----------------------------------------------------

TEST(InformationBottleneck, PriorAndBasicInvariants) {
  const auto vocab = small_vocab();
  const auto model = QeModel<double>::initialize(small_config(), 6);
  std::vector<EncodedInput> inputs;
  const std::vector<std::vector<std::string>> srcs = {{"a", "b"}, {"c", "d", "e"}, {"e"}};
  for (const auto& s : srcs) inputs.push_back(vocab.encode(s, std::vector<std::string>{"x", "y"}));
  const auto prior = estimate_ib_prior(model, inputs);
  ASSERT_TRUE(prior.has_layer(3));
  EXPECT_EQ(prior.stddev[1].size(), 16u);
  const auto back = IbPrior::from_json(prior.to_json());
  EXPECT_EQ(back.mean, prior.mean);

  const auto input = sample_input(vocab);
  const auto trace = model.encode_and_predict(input);
  const auto r = information_bottleneck_core(model, 2, trace.hidden[2], trace.prediction, prior, {.seed = 3});
  ASSERT_EQ(r.objective.size(), 11u);
  ASSERT_EQ(r.capacity.size(), input.size());
  for (double c : r.capacity) EXPECT_GE(c, 0.0);
  for (double a : r.alpha) {
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
  }
  EXPECT_LE(r.objective.back(), r.objective.front());
  // Same seed, same result.
  const auto again = information_bottleneck_core(model, 2, trace.hidden[2], trace.prediction, prior, {.seed = 3});
  EXPECT_EQ(r.capacity, again.capacity);
}

TEST(InformationBottleneck, StrongerPenaltyKeepsLessInformation) {
  const auto vocab = small_vocab();
  const auto model = QeModel<double>::initialize(small_config(), 8);
  const auto input = sample_input(vocab);
  const auto prior = estimate_ib_prior(model, std::vector<EncodedInput>{input});
  const auto trace = model.encode_and_predict(input);
  const auto weak = information_bottleneck_core(model, 1, trace.hidden[1], trace.prediction, prior, {.beta = 1e-4});
  const auto strong = information_bottleneck_core(model, 1, trace.hidden[1], trace.prediction, prior, {.beta = 1.0});
  const double sw = std::accumulate(weak.capacity.begin(), weak.capacity.end(), 0.0);
  const double ss = std::accumulate(strong.capacity.begin(), strong.capacity.end(), 0.0);
  EXPECT_LT(ss, sw);
}

// ---- attention ------------------------------------------------------------------

TEST(Attention, HeadAveragedColumnMeans) {
  const Tensor<double> h1 = Tensor<double>::matrix(2, 2, {0.9, 0.1, 0.4, 0.6});
  const Tensor<double> h2 = Tensor<double>::matrix(2, 2, {0.5, 0.5, 0.0, 1.0});
  const Tensor<double> maps[] = {h1, h2};
  const auto all = attention_scores<double>(maps);
  EXPECT_NEAR(all[0], (0.9 + 0.4 + 0.5 + 0.0) / 4.0, 1e-12);
  EXPECT_NEAR(all[1], (0.1 + 0.6 + 0.5 + 1.0) / 4.0, 1e-12);
  const auto cls = attention_scores<double>(maps, true);
  EXPECT_NEAR(cls[0], 0.7, 1e-12);
  EXPECT_NEAR(cls[1], 0.3, 1e-12);
}

TEST(Attention, AttributionFromTrace) {
  const auto vocab = small_vocab();
  const auto model = QeModel<double>::initialize(small_config(), 1);
  const auto input = sample_input(vocab);
  const auto trace = model.encode_and_predict(input);
  const auto a = attention_attribution(input, trace, 3);
  EXPECT_EQ(a.layer, 3u);
  EXPECT_NEAR(std::accumulate(a.raw.begin(), a.raw.end(), 0.0), 1.0, 1e-12);  // columns of a stochastic map
  EXPECT_THROW(attention_attribution(input, trace, 0), Error);
}

// ---- LIME -----------------------------------------------------------------------

TEST(Lime, RecoversALinearModel) {
  const std::vector<double> coef = {0.5, -1.0, 2.0, 0.0, 0.25};
  auto predict = [&](const std::vector<bool>& keep) {
    double y = 0.3;
    for (std::size_t i = 0; i < keep.size(); ++i) y += keep[i] ? coef[i] : 0.0;
    return y;
  };
  const auto r = lime_core(coef.size(), predict, {.samples = 400, .ridge = 1e-8, .seed = 5});
  for (std::size_t i = 0; i < coef.size(); ++i) EXPECT_NEAR(r.coefficients[i], coef[i], 1e-6);
  EXPECT_NEAR(r.intercept, 0.3, 1e-6);

  // Default regularization shrinks but keeps the ranking.
  const auto shrunk = lime_core(coef.size(), predict, {.seed = 5});
  EXPECT_GT(shrunk.coefficients[2], shrunk.coefficients[0]);
  EXPECT_LT(shrunk.coefficients[1], shrunk.coefficients[4]);
  EXPECT_LT(std::abs(shrunk.coefficients[2]), 2.0);
}

TEST(Lime, FirstSampleIsTheInputAndSeedsReproduce) {
  std::vector<std::vector<bool>> seen;
  auto predict = [&](const std::vector<bool>& keep) {
    seen.push_back(keep);
    return static_cast<double>(std::count(keep.begin(), keep.end(), true));
  };
  lime_core(6, predict, {.samples = 20, .seed = 9});
  ASSERT_EQ(seen.size(), 20u);
  EXPECT_EQ(seen[0], std::vector<bool>(6, true));
  for (std::size_t s = 1; s < seen.size(); ++s) EXPECT_LT(std::count(seen[s].begin(), seen[s].end(), true), 6);
  const auto first = seen;
  seen.clear();
  lime_core(6, predict, {.samples = 20, .seed = 9});
  EXPECT_EQ(seen, first);
}

TEST(Lime, MaskWordsAndModelAttribution) {
  const auto vocab = small_vocab();
  const auto input = sample_input(vocab);
  std::vector<bool> keep(7, true);
  keep[1] = false;  // second source word
  keep[5] = false;  // second target word
  const auto masked = mask_words(input, keep);
  EXPECT_EQ(masked.ids[2], special::mask);
  EXPECT_EQ(masked.ids[7], special::mask);
  EXPECT_EQ(masked.ids[1], input.ids[1]);
  EXPECT_THROW(mask_words(input, std::vector<bool>(3, true)), DimensionError);

  const auto model = QeModel<double>::initialize(small_config(), 3);
  const auto a = lime(model, input, {.samples = 60, .seed = 1});
  EXPECT_EQ(a.source_scores.size(), 4u);
  EXPECT_EQ(a.target_scores.size(), 3u);
  EXPECT_EQ(a.raw[0], 0.0);  // [CLS]
  EXPECT_FALSE(a.layer.has_value());
}

TEST(Lime, RejectsDegenerateOptions) {
  auto predict = [](const std::vector<bool>&) { return 0.0; };
  EXPECT_THROW(lime_core(3, predict, {.samples = 5}), ContractError);
  EXPECT_THROW(lime_core(0, predict, {}), ContractError);
}

// ---- baselines, orientation, dumps ---------------------------------------------

TEST(Baselines, RandomGlassboxSupervised) {
  corpus::Example e;
  e.id = "e1";
  e.source = {"a", "b"};
  e.target = {"x", "y", "z"};
  Rng rng(1);
  const auto r = random_scores(e, rng);
  ASSERT_EQ(r.target_scores.size(), 3u);
  for (double s : r.target_scores) {
    EXPECT_GE(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
  EXPECT_THROW(glassbox_scores(e), DataError);
  e.logprobs = std::vector<double>{-0.1, -3.0, -0.5};
  const auto g = glassbox_scores(e);
  EXPECT_EQ(g.target_scores, (std::vector<double>{0.1, 3.0, 0.5}));
}

TEST(Orientation, OnlyGradientAndSurrogateMethodsFlip) {
  const std::vector<double> raw = {1.0, -2.0};
  EXPECT_EQ(orient(raw, Method::ig, Orientation::higher_is_better), (std::vector<double>{-1.0, 2.0}));
  EXPECT_EQ(orient(raw, Method::lime, Orientation::higher_is_better), (std::vector<double>{-1.0, 2.0}));
  EXPECT_EQ(orient(raw, Method::ig, Orientation::higher_is_worse), raw);
  for (Method m : {Method::attention, Method::ib, Method::random, Method::glassbox, Method::supervised})
    EXPECT_EQ(orient(raw, m, Orientation::higher_is_better), raw);
}

TEST(Dumps, RoundTripAndMinimalRecords) {
  const auto dir = std::filesystem::temp_directory_path() / "attriqe_dumps";
  std::filesystem::create_directories(dir);
  Attribution a;
  a.id = "s1";
  a.method = Method::ig;
  a.layer = 2;
  a.raw = {0.1, 0.2};
  a.source_scores = {0.3};
  a.target_scores = {0.4, 1e-300};
  a.meta = {{"steps", 32}};
  write_dump(dir / "d.jsonl", std::vector<Attribution>{a});
  const auto back = read_dump(dir / "d.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].target_scores, a.target_scores);
  EXPECT_EQ(back[0].layer, a.layer);
  EXPECT_EQ(back[0].method, Method::ig);

  write_file(dir / "ext.jsonl", "{\"id\":\"s9\",\"target_scores\":[0.5,0.1]}\n");
  const auto ext = read_dump(dir / "ext.jsonl");
  EXPECT_EQ(ext[0].method, Method::external);
  EXPECT_FALSE(ext[0].layer.has_value());

  write_file(dir / "broken.jsonl", "{\"id\":\"s9\"}\n");
  EXPECT_THROW(read_dump(dir / "broken.jsonl"), Error);
  Attribution nan = a;
  nan.target_scores[0] = std::nan("");
  EXPECT_THROW(nan.validate(), NumericError);
}

}  // namespace
}  // namespace attriqe::attr
