#include "attriqe/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <spdlog/spdlog.h>

#include "attriqe/errors.hpp"
#include "attriqe/metrics.hpp"

namespace attriqe {

using ad::Graph;
using ad::Tensor;
using ad::Var;
using corpus::Example;
using corpus::Label;

std::string_view objective_name(Objective o) noexcept {
  switch (o) {
    case Objective::da: return "da";
    case Objective::hter: return "hter";
    case Objective::binary: return "binary";
  }
  return "?";
}

Objective parse_objective(std::string_view name) {
  if (name == "da") return Objective::da;
  if (name == "hter") return Objective::hter;
  if (name == "binary") return Objective::binary;
  throw ConfigError("unknown training objective '" + std::string(name) + "' (expected da, hter or binary)");
}

HeadKind head_for(Objective o) noexcept { return o == Objective::binary ? HeadKind::binary : HeadKind::regression; }

Orientation orientation_for(Objective o) noexcept {
  return o == Objective::da ? Orientation::higher_is_better : Orientation::higher_is_worse;
}

nlohmann::json TrainOptions::to_json() const {
  nlohmann::json j = {{"max_epochs", max_epochs},       {"batch_size", batch_size},
                      {"learning_rate", learning_rate}, {"warmup_fraction", warmup_fraction},
                      {"grad_clip", grad_clip},         {"patience", patience},
                      {"adam_beta1", adam_beta1},       {"adam_beta2", adam_beta2},
                      {"adam_epsilon", adam_epsilon},   {"seed", seed}};
  return j;
}

TrainOptions TrainOptions::from_json(const nlohmann::json& j) {
  TrainOptions o;
  try {
    o.max_epochs = j.value("max_epochs", o.max_epochs);
    o.batch_size = j.value("batch_size", o.batch_size);
    o.learning_rate = j.value("learning_rate", o.learning_rate);
    o.warmup_fraction = j.value("warmup_fraction", o.warmup_fraction);
    o.grad_clip = j.value("grad_clip", o.grad_clip);
    o.patience = j.value("patience", o.patience);
    o.adam_beta1 = j.value("adam_beta1", o.adam_beta1);
    o.adam_beta2 = j.value("adam_beta2", o.adam_beta2);
    o.adam_epsilon = j.value("adam_epsilon", o.adam_epsilon);
    o.seed = j.value("seed", o.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training options: ") + e.what());
  }
  if (o.max_epochs < 1 || o.batch_size < 1) throw ConfigError("training options: epochs and batch size must be >= 1");
  if (!(o.learning_rate > 0.0)) throw ConfigError("training options: learning rate must be positive");
  if (!(o.warmup_fraction >= 0.0 && o.warmup_fraction < 1.0)) {
    throw ConfigError("training options: warmup fraction must lie in [0,1)");
  }
  return o;
}

double sentence_target(const Example& e, Objective objective) {
  switch (objective) {
    case Objective::da:
      if (!e.da) throw DataError("example '" + e.id + "' has no DA score");
      return *e.da / 100.0;
    case Objective::hter:
      if (e.hter) return *e.hter;
      if (e.has_labels()) return corpus::hter(e.labels);
      throw DataError("example '" + e.id + "' has neither HTER nor labels");
    case Objective::binary:
      return e.has_error() ? 1.0 : 0.0;
  }
  return 0.0;
}

namespace {

// Adam with linear warmup then linear decay to zero.
template <typename T>
class Adam {
 public:
  Adam(const ad::ParameterSet<T>& params, const TrainOptions& o, std::size_t total_steps)
      : o_(o), total_(std::max<std::size_t>(total_steps, 1)) {
    warmup_ = static_cast<std::size_t>(std::ceil(o.warmup_fraction * static_cast<double>(total_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params[i].size(), 0.0);
      v_.emplace_back(params[i].size(), 0.0);
    }
  }

  double rate(std::size_t step) const {
    const double s = static_cast<double>(step + 1);
    if (warmup_ > 0 && step < warmup_) return o_.learning_rate * s / static_cast<double>(warmup_);
    const double remaining = static_cast<double>(total_ - std::min(step, total_)) /
                             static_cast<double>(std::max<std::size_t>(total_ - warmup_, 1));
    return o_.learning_rate * std::max(remaining, 0.0);
  }

  void step(ad::ParameterSet<T>& params, const std::vector<std::vector<double>>& grads) {
    const double lr = rate(t_);
    ++t_;
    const double bc1 = 1.0 - std::pow(o_.adam_beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(o_.adam_beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto values = params[i].values();
      for (std::size_t k = 0; k < values.size(); ++k) {
        const double g = grads[i][k];
        m_[i][k] = o_.adam_beta1 * m_[i][k] + (1.0 - o_.adam_beta1) * g;
        v_[i][k] = o_.adam_beta2 * v_[i][k] + (1.0 - o_.adam_beta2) * g * g;
        const double mh = m_[i][k] / bc1, vh = v_[i][k] / bc2;
        values[k] = static_cast<T>(static_cast<double>(values[k]) - lr * mh / (std::sqrt(vh) + o_.adam_epsilon));
      }
    }
  }

  std::size_t steps_taken() const noexcept { return t_; }

 private:
  TrainOptions o_;
  std::size_t total_, warmup_ = 0, t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct Prepared {
  EncodedInput input;
  double target = 0.0;                  // sentence objectives
  std::vector<double> token_targets;    // token objective, one per position
  std::vector<double> token_mask;       // 1 on target-side tokens
};

// One objective-specific piece of the training loop.
template <typename T>
struct Task {
  HeadKind head;
  std::function<Var<T>(Var<T> logits, const Prepared&)> loss;
  std::function<std::pair<std::string, double>(const QeModel<T>&, std::span<const Prepared>)> dev_metric;
};

template <typename T>
TrainResult<T> run_training(ModelConfig config, std::span<const Prepared> train, std::span<const Prepared> dev,
                            const Task<T>& task, const TrainOptions& options) {
  if (train.empty() || dev.empty()) throw DataError("training needs non-empty train and dev splits");
  config.head = task.head;
  QeModel<T> model = QeModel<T>::initialize(config, derive_seed(options.seed, 0x1a17));
  const std::size_t batches = (train.size() + options.batch_size - 1) / options.batch_size;
  Adam<T> adam(model.parameters(), options, batches * options.max_epochs);

  std::ofstream log_file;
  if (options.log_path) {
    if (options.log_path->has_parent_path()) std::filesystem::create_directories(options.log_path->parent_path());
    log_file.open(*options.log_path, std::ios::trunc);
    if (!log_file) throw PathError("cannot open training log '" + options.log_path->string() + "'");
  }
  TrainResult<T> result{model, "", -std::numeric_limits<double>::infinity(), 0, {}};
  auto emit = [&](nlohmann::json rec) {
    if (log_file) log_file << rec.dump() << '\n' << std::flush;
    result.log.push_back(std::move(rec));
  };

  std::vector<std::size_t> order(train.size());
  std::size_t since_best = 0;
  const auto started = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle(derive_seed(options.seed, 0x5u, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle, i)]);

    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * options.batch_size;
      const std::size_t end = std::min(begin + options.batch_size, train.size());
      const std::size_t step = adam.steps_taken();
      Graph<T> g;
      const auto bound = model.bind(g, true);
      Var<T> total;
      for (std::size_t k = begin; k < end; ++k) {
        Rng drop(derive_seed(options.seed, step + 1, order[k]));
        const Prepared& ex = train[order[k]];
        Var<T> loss = task.loss(model.forward_logits(bound, ex.input, {&drop, nullptr}), ex);
        total = total.valid() ? ad::add(total, loss) : loss;
      }
      total = ad::scale(total, static_cast<T>(1.0 / static_cast<double>(end - begin)));
      const double loss_value = static_cast<double>(total.value()[0]);
      if (!std::isfinite(loss_value)) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step));
      }
      g.backward(total);

      std::vector<std::vector<double>> grads(bound.p.size());
      double norm2 = 0.0;
      for (std::size_t i = 0; i < bound.p.size(); ++i) {
        const auto& gr = g.grad(bound.p[i]);
        grads[i].assign(gr.values().begin(), gr.values().end());
        for (double v : grads[i]) norm2 += v * v;
      }
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) {
        throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step));
      }
      if (options.grad_clip > 0.0 && norm > options.grad_clip) {
        const double f = options.grad_clip / norm;
        for (auto& gvec : grads)
          for (auto& v : gvec) v *= f;
      }
      adam.step(model.mutable_parameters(), grads);
      epoch_loss += loss_value * static_cast<double>(end - begin);
    }

    const auto [name, metric] = task.dev_metric(model, dev);
    result.metric_name = name;
    const double minutes =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() / 60.0;
    emit({{"epoch", epoch},
          {"step", adam.steps_taken()},
          {"loss", epoch_loss / static_cast<double>(train.size())},
          {"dev_metric", metric},
          {"metric", name}});
    spdlog::info("epoch {} loss {:.5f} dev {} {:.4f} ({:.1f} min)", epoch,
                 epoch_loss / static_cast<double>(train.size()), name, metric, minutes);
    if (metric > result.best_metric) {
      result.best_metric = metric;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= options.patience) {
      break;
    }
  }
  return result;
}

template <typename T>
Tensor<T> scalar_tensor(double v) {
  return Tensor<T>({1}, std::vector<T>{static_cast<T>(v)});
}

}  // namespace

template <typename T>
TrainResult<T> train_sentence_model(ModelConfig config, const corpus::Vocabulary& vocab,
                                    std::span<const Example> train, std::span<const Example> dev,
                                    Objective objective, const TrainOptions& options) {
  config.vocab_size = vocab.size();
  config.orientation = orientation_for(objective);
  auto prepare = [&](std::span<const Example> split) {
    std::vector<Prepared> out;
    out.reserve(split.size());
    for (const auto& e : split) out.push_back({vocab.encode(e.source, e.target), sentence_target(e, objective), {}, {}});
    return out;
  };
  const auto tr = prepare(train), dv = prepare(dev);
  if (objective == Objective::binary) {
    std::size_t pos = 0;
    for (const auto& p : tr) pos += p.target > 0.5;
    if (pos == 0 || pos == tr.size()) {
      throw DataError("degenerate labels: every training example has the same binary label");
    }
  }

  Task<T> task;
  task.head = head_for(objective);
  if (objective == Objective::binary) {
    task.loss = [](Var<T> logits, const Prepared& p) { return ad::bce_with_logits(logits, scalar_tensor<T>(p.target)); };
    task.dev_metric = [](const QeModel<T>& m, std::span<const Prepared> d) {
      std::vector<bool> pred, gold;
      for (const auto& p : d) {
        pred.push_back(m.predict(p.input) >= T(0.5));
        gold.push_back(p.target > 0.5);
      }
      return std::pair<std::string, double>{"f1", eval::f1_score(pred, gold)};
    };
  } else {
    task.loss = [](Var<T> logits, const Prepared& p) { return ad::mse_loss(logits, scalar_tensor<T>(p.target)); };
    task.dev_metric = [](const QeModel<T>& m, std::span<const Prepared> d) {
      std::vector<double> pred, gold;
      for (const auto& p : d) {
        pred.push_back(static_cast<double>(m.predict(p.input)));
        gold.push_back(p.target);
      }
      try {
        return std::pair<std::string, double>{"pearson", pearson(pred, gold)};
      } catch (const NumericError&) {
        // Constant targets or predictions: fall back to negative MSE.
        double mse = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) mse += (pred[i] - gold[i]) * (pred[i] - gold[i]);
        return std::pair<std::string, double>{"neg_mse", -mse / static_cast<double>(pred.size())};
      }
    };
  }
  return run_training<T>(config, tr, dv, task, options);
}

namespace {

Prepared prepare_tokens(const corpus::Vocabulary& vocab, const Example& e) {
  if (!e.has_labels()) throw DataError("example '" + e.id + "' has no word labels for token training");
  Prepared p{vocab.encode(e.source, e.target), 0.0, {}, {}};
  p.token_targets.assign(p.input.size(), 0.0);
  p.token_mask.assign(p.input.size(), 0.0);
  for (std::size_t i = 0; i < p.input.size(); ++i) {
    const auto& span = p.input.spans[i];
    if (!span || span->side != Side::target) continue;
    p.token_mask[i] = 1.0;
    p.token_targets[i] = e.labels[span->word] == Label::bad ? 1.0 : 0.0;
  }
  return p;
}

}  // namespace

template <typename T>
std::vector<double> word_bad_probabilities(const QeModel<T>& model, const corpus::Vocabulary& vocab,
                                           const Example& e) {
  if (model.config().head != HeadKind::token) throw ContractError("word probabilities need a token-head model");
  const auto input = vocab.encode(e.source, e.target);
  const auto trace = model.encode_and_predict(input);
  std::vector<double> probs(trace.token_probabilities.begin(), trace.token_probabilities.end());
  return corpus::map_subword_scores_to_words(probs, input, Side::target);
}

template <typename T>
TrainResult<T> train_word_model(ModelConfig config, const corpus::Vocabulary& vocab,
                                std::span<const Example> train, std::span<const Example> dev,
                                const TrainOptions& options) {
  config.vocab_size = vocab.size();
  config.orientation = Orientation::higher_is_worse;
  std::vector<Prepared> tr, dv;
  for (const auto& e : train) tr.push_back(prepare_tokens(vocab, e));
  for (const auto& e : dev) dv.push_back(prepare_tokens(vocab, e));

  Task<T> task;
  task.head = HeadKind::token;
  task.loss = [](Var<T> logits, const Prepared& p) {
    const std::vector<std::size_t> shape{p.token_targets.size()};
    Tensor<T> targets(shape), mask(shape);
    for (std::size_t i = 0; i < shape[0]; ++i) {
      targets[i] = static_cast<T>(p.token_targets[i]);
      mask[i] = static_cast<T>(p.token_mask[i]);
    }
    return ad::bce_with_logits(logits, targets, mask);
  };
  task.dev_metric = [](const QeModel<T>& m, std::span<const Prepared> d) {
    std::vector<double> scores;
    std::vector<Label> labels;
    double loss = 0.0;
    std::size_t count = 0;
    for (const auto& p : d) {
      const auto trace = m.encode_and_predict(p.input);
      for (std::size_t i = 0; i < p.input.size(); ++i) {
        if (p.token_mask[i] == 0.0) continue;
        const double prob = static_cast<double>(trace.token_probabilities[i]);
        scores.push_back(prob);
        labels.push_back(p.token_targets[i] > 0.5 ? Label::bad : Label::ok);
        loss -= p.token_targets[i] > 0.5 ? std::log(std::max(prob, 1e-12)) : std::log(std::max(1.0 - prob, 1e-12));
        ++count;
      }
    }
    if (auto ap = eval::ap_instance(scores, labels)) return std::pair<std::string, double>{"ap", *ap};
    return std::pair<std::string, double>{"neg_bce", -loss / static_cast<double>(std::max<std::size_t>(count, 1))};
  };
  return run_training<T>(config, tr, dv, task, options);
}

#define ATTRIQE_INSTANTIATE_TRAIN(T)                                                                           \
  template TrainResult<T> train_sentence_model<T>(ModelConfig, const corpus::Vocabulary&,                    \
                                                  std::span<const Example>, std::span<const Example>,        \
                                                  Objective, const TrainOptions&);                           \
  template TrainResult<T> train_word_model<T>(ModelConfig, const corpus::Vocabulary&, std::span<const Example>, \
                                              std::span<const Example>, const TrainOptions&);                \
  template std::vector<double> word_bad_probabilities<T>(const QeModel<T>&, const corpus::Vocabulary&,        \
                                                         const Example&);

ATTRIQE_INSTANTIATE_TRAIN(float)
ATTRIQE_INSTANTIATE_TRAIN(double)

}  // namespace attriqe
