#include <filesystem>

#include <gtest/gtest.h>

#include "attriqe/errors.hpp"
#include "attriqe/metrics.hpp"
#include "attriqe/model.hpp"
#include "attriqe/train.hpp"

namespace attriqe {
namespace {

namespace fs = std::filesystem;

corpus::ToyDataset toy(std::size_t train, std::size_t dev, std::uint64_t seed = 3) {
  const auto pairs = corpus::generate_synthetic_corpus(train + 2 * dev, seed);
  corpus::ToyOptions o;
  o.train_size = train;
  o.dev_size = dev;
  o.test_size = dev;
  o.seed = seed;
  return corpus::generate_toy_dataset(pairs, o);
}

ModelConfig small(std::size_t vocab) {
  ModelConfig c;
  c.layers = 2;
  c.d_model = 16;
  c.heads = 2;
  c.ff = 32;
  c.vocab_size = vocab;
  c.max_len = 64;
  c.init_std = 0.2;
  return c;
}

TEST(ModelConfig, Validation) {
  ModelConfig c = small(20);
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(20);
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(20);
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  const auto back = ModelConfig::from_json(small(20).to_json());
  EXPECT_EQ(back.to_json(), small(20).to_json());
  EXPECT_THROW(parse_head_kind("softmax"), ConfigError);
}

class ModelFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    data_ = toy(60, 10);
    vocab_ = corpus::Vocabulary::build(data_.train, {});
    model_ = QeModel<double>::initialize(small(vocab_.size()), 5);
  }
  EncodedInput input(std::size_t i) const {
    return vocab_.encode(data_.dev[i].source, data_.dev[i].target);
  }
  corpus::ToyDataset data_;
  corpus::Vocabulary vocab_;
  QeModel<double> model_;
};

TEST_F(ModelFixture, TracesAreBitIdentical) {
  const auto a = model_.encode_and_predict(input(0)), b = model_.encode_and_predict(input(0));
  EXPECT_EQ(a.prediction, b.prediction);
  ASSERT_EQ(a.hidden.size(), 3u);
  for (std::size_t l = 0; l < a.hidden.size(); ++l) EXPECT_EQ(a.hidden[l], b.hidden[l]);
  ASSERT_EQ(a.attention.size(), 2u);
  EXPECT_EQ(a.attention[1].size(), 2u);
  EXPECT_EQ(a.attention[1][0], b.attention[1][0]);
}

TEST_F(ModelFixture, ForwardFromReproducesThePrediction) {
  const auto trace = model_.encode_and_predict(input(1));
  for (std::size_t l = 0; l <= 2; ++l) EXPECT_EQ(model_.predict_from_hidden(l, trace.hidden[l]), trace.prediction);
  EXPECT_EQ(model_.predict(input(1)), trace.prediction);
  EXPECT_THROW(model_.predict_from_hidden(3, trace.hidden[2]), Error);
  EXPECT_THROW(model_.predict_from_hidden(1, ad::Tensor<double>({2, 8})), DimensionError);
}

TEST_F(ModelFixture, WordOrderMatters) {
  auto e = data_.dev[2];
  ASSERT_GE(e.target.size(), 2u);
  const double before = model_.predict(vocab_.encode(e.source, e.target));
  std::size_t j = 1;
  while (j < e.target.size() && e.target[j] == e.target[0]) ++j;
  ASSERT_LT(j, e.target.size());
  std::swap(e.target[0], e.target[j]);
  EXPECT_NE(model_.predict(vocab_.encode(e.source, e.target)), before);
}

TEST_F(ModelFixture, InputChecks) {
  std::vector<std::string> long_src(80, data_.train[0].source[0]);
  EXPECT_THROW(model_.predict(vocab_.encode(long_src, data_.train[0].target)), LengthError);
  EncodedInput bad = input(0);
  bad.ids[1] = static_cast<std::int32_t>(vocab_.size() + 3);
  EXPECT_THROW(model_.predict(bad), VocabularyError);
}

TEST_F(ModelFixture, SaveAndLoad) {
  const fs::path dir = fs::temp_directory_path() / "attriqe_model_io";
  fs::remove_all(dir);
  save_model(dir, model_, vocab_, {{"note", "test"}});
  const auto loaded = load_model<double>(dir);
  EXPECT_EQ(loaded.model.predict(input(3)), model_.predict(input(3)));
  EXPECT_EQ(loaded.vocab.hash(), vocab_.hash());
  EXPECT_EQ(loaded.meta["extra"]["note"], "test");
  // Reading the same checkpoint at the other precision works and stays close.
  const auto as_float = load_model<float>(dir);
  EXPECT_NEAR(as_float.model.predict(vocab_.encode(data_.dev[3].source, data_.dev[3].target)), model_.predict(input(3)),
              1e-4);

  const auto other = corpus::Vocabulary::build(toy(30, 5, 9).train, {});
  other.save(dir / "vocab.json");
  EXPECT_THROW(load_model<double>(dir), DataError);
  EXPECT_THROW(load_model<double>(dir / "missing"), Error);
}

TEST(Pearson, HandValues) {
  EXPECT_NEAR(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 7}), 0.9933992677987828, 1e-12);
  EXPECT_THROW(pearson(std::vector<double>{1, 1}, std::vector<double>{1, 2}), NumericError);
}

// ---- training ---------------------------------------------------------------------

TrainOptions quick(std::size_t epochs) {
  TrainOptions o;
  o.max_epochs = epochs;
  o.batch_size = 16;
  o.learning_rate = 1e-3;
  o.seed = 4;
  return o;
}

TEST(Training, DeterministicForAFixedSeed) {
  const auto d = toy(120, 20);
  const auto vocab = corpus::Vocabulary::build(d.train, {});
  const auto a = train_sentence_model<float>(small(vocab.size()), vocab, d.train, d.dev, Objective::binary, quick(2));
  const auto b = train_sentence_model<float>(small(vocab.size()), vocab, d.train, d.dev, Objective::binary, quick(2));
  EXPECT_EQ(a.model.parameters().checksum(), b.model.parameters().checksum());
  EXPECT_EQ(a.log.size(), b.log.size());
  EXPECT_EQ(a.metric_name, "f1");
  ASSERT_FALSE(a.log.empty());
  for (const char* k : {"epoch", "step", "loss", "dev_metric"}) EXPECT_TRUE(a.log[0].contains(k)) << k;
}

TEST(Training, FitsASmallSetAndReportsObjectives) {
  const auto d = toy(64, 16, 5);
  const auto vocab = corpus::Vocabulary::build(d.train, {});
  auto o = quick(25);
  o.patience = 25;
  ModelConfig c = small(vocab.size());
  c.dropout = 0.0;
  const auto r = train_sentence_model<float>(c, vocab, d.train, d.dev, Objective::hter, o);
  EXPECT_EQ(r.model.config().head, HeadKind::regression);
  EXPECT_EQ(r.model.config().orientation, Orientation::higher_is_worse);
  EXPECT_LT(r.log.back()["loss"].get<double>(), 0.5 * r.log.front()["loss"].get<double>());

  EXPECT_DOUBLE_EQ(sentence_target(d.train[0], Objective::da), *d.train[0].da / 100.0);
  EXPECT_EQ(orientation_for(Objective::da), Orientation::higher_is_better);
  corpus::Example bare;
  bare.id = "x";
  bare.source = bare.target = {"a"};
  EXPECT_THROW(sentence_target(bare, Objective::da), DataError);
}

TEST(Training, DegenerateBinaryLabelsAreRejected) {
  auto d = toy(40, 10);
  std::vector<corpus::Example> clean;
  for (const auto& e : d.train)
    if (!e.has_error()) clean.push_back(e);
  const auto vocab = corpus::Vocabulary::build(clean, {});
  EXPECT_THROW(train_sentence_model<float>(small(vocab.size()), vocab, clean, d.dev, Objective::binary, quick(1)),
               DataError);
}

TEST(Training, DivergenceIsReported) {
  const auto d = toy(64, 16);
  const auto vocab = corpus::Vocabulary::build(d.train, {});
  auto o = quick(20);
  o.learning_rate = 1e30;
  o.grad_clip = 1e30;
  o.warmup_fraction = 0.0;
  o.patience = 20;
  try {
    train_sentence_model<float>(small(vocab.size()), vocab, d.train, d.dev, Objective::hter, o);
    FAIL() << "training with an absurd learning rate should diverge";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Training, WordModelBeatsRandomScores) {
  const auto d = toy(1500, 200, 8);
  const auto vocab = corpus::Vocabulary::build(d.train, {});
  auto o = quick(6);
  ModelConfig c = small(vocab.size());
  c.head = HeadKind::token;
  const auto r = train_word_model<float>(c, vocab, d.train, d.dev, o);
  double ap_model = 0.0, ap_random = 0.0;
  std::size_t n = 0;
  Rng rng(1);
  for (const auto& e : d.test) {
    const auto p = word_bad_probabilities(r.model, vocab, e);
    ASSERT_EQ(p.size(), e.target.size());
    std::vector<double> random(e.target.size());
    for (auto& v : random) v = uniform01(rng);
    const auto a = eval::ap_instance(p, e.labels);
    if (!a) continue;
    ap_model += *a;
    ap_random += *eval::ap_instance(random, e.labels);
    ++n;
  }
  ASSERT_GT(n, 50u);
  EXPECT_GT(ap_model / n, ap_random / n);
}

}  // namespace
}  // namespace attriqe
