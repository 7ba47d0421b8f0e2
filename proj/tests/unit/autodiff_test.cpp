#include <cmath>
#include <functional>
#include <type_traits>
#include <string>

#include <gtest/gtest.h>

#include "attriqe/grad_check.hpp"
#include "attriqe/graph.hpp"
#include "attriqe/model.hpp"

namespace attriqe::ad {
namespace {

constexpr int kSeeds = 20;

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(lo + (hi - lo) * uniform01(rng));
  return t;
}

// Away from zero so relu's kink never sits inside a finite-difference step.
template <typename T>
Tensor<T> kink_free(Shape shape, Rng& rng) {
  Tensor<T> t = random_tensor<T>(std::move(shape), rng, 0.2, 1.0);
  for (auto& v : t.storage())
    if (uniform01(rng) < 0.5) v = -v;
  return t;
}

// Projects any output onto a fixed random direction, turning it into a scalar
// whose gradient touches every output element.
template <typename T>
Var<T> project(Graph<T>& g, Var<T> y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, g.constant(random_tensor<T>(y.shape(), rng))));
}

template <typename T>
struct Case {
  std::string name;
  std::function<Tensor<T>(Rng&)> point;
  std::function<Var<T>(Graph<T>&, Var<T>, Rng&)> body;
};

template <typename T>
std::vector<Case<T>> primitive_cases() {
  using G = Graph<T>;
  using V = Var<T>;
  auto mat = [](std::size_t r, std::size_t c) { return [=](Rng& rng) { return random_tensor<T>({r, c}, rng); }; };
  std::vector<Case<T>> cases;
  cases.push_back({"add", mat(3, 4), [](G& g, V x, Rng& r) { return add(x, g.constant(random_tensor<T>({3, 4}, r))); }});
  cases.push_back({"sub_left", mat(3, 4), [](G& g, V x, Rng& r) { return sub(x, g.constant(random_tensor<T>({3, 4}, r))); }});
  cases.push_back({"sub_right", mat(3, 4), [](G& g, V x, Rng& r) { return sub(g.constant(random_tensor<T>({3, 4}, r)), x); }});
  cases.push_back({"mul", mat(3, 4), [](G& g, V x, Rng& r) { return mul(x, g.constant(random_tensor<T>({3, 4}, r))); }});
  cases.push_back({"mul_self", mat(2, 5), [](G&, V x, Rng&) { return mul(x, x); }});
  cases.push_back({"add_bias_x", mat(3, 4), [](G& g, V x, Rng& r) { return add_bias(x, g.constant(random_tensor<T>({4}, r))); }});
  cases.push_back({"add_bias_b", [](Rng& r) { return random_tensor<T>({4}, r); },
                   [](G& g, V b, Rng& r) { return add_bias(g.constant(random_tensor<T>({3, 4}, r)), b); }});
  cases.push_back({"scale", mat(3, 3), [](G&, V x, Rng&) { return scale(x, T(-1.7)); }});
  cases.push_back({"add_scalar", mat(3, 3), [](G&, V x, Rng&) { return add_scalar(x, T(0.3)); }});
  cases.push_back({"scale_rows_x", mat(4, 3), [](G& g, V x, Rng& r) { return scale_rows(x, g.constant(random_tensor<T>({4}, r))); }});
  cases.push_back({"scale_rows_s", [](Rng& r) { return random_tensor<T>({4}, r); },
                   [](G& g, V s, Rng& r) { return scale_rows(g.constant(random_tensor<T>({4, 3}, r)), s); }});
  cases.push_back({"matmul_a", mat(3, 5), [](G& g, V x, Rng& r) { return matmul(x, g.constant(random_tensor<T>({5, 2}, r))); }});
  cases.push_back({"matmul_b", mat(5, 2), [](G& g, V x, Rng& r) { return matmul(g.constant(random_tensor<T>({3, 5}, r)), x); }});
  cases.push_back({"matmul_square", mat(4, 4), [](G&, V x, Rng&) { return matmul(x, x); }});
  cases.push_back({"transpose", mat(2, 5), [](G&, V x, Rng&) { return transpose(x); }});
  cases.push_back({"reshape", mat(2, 6), [](G&, V x, Rng&) { return reshape(x, Shape{3, 4}); }});
  cases.push_back({"softmax_rows", mat(3, 5), [](G&, V x, Rng&) { return softmax(x, 1); }});
  cases.push_back({"softmax_cols", mat(3, 5), [](G&, V x, Rng&) { return softmax(x, 0); }});
  cases.push_back({"layer_norm_x", mat(3, 6), [](G& g, V x, Rng& r) {
                     return layer_norm(x, g.constant(random_tensor<T>({6}, r, 0.5, 1.5)),
                                       g.constant(random_tensor<T>({6}, r)), T(1e-5));
                   }});
  cases.push_back({"layer_norm_gain", [](Rng& r) { return random_tensor<T>({6}, r, 0.5, 1.5); }, [](G& g, V gain, Rng& r) {
                     return layer_norm(g.constant(random_tensor<T>({3, 6}, r)), gain, g.constant(random_tensor<T>({6}, r)),
                                       T(1e-5));
                   }});
  cases.push_back({"layer_norm_bias", [](Rng& r) { return random_tensor<T>({6}, r); }, [](G& g, V bias, Rng& r) {
                     return layer_norm(g.constant(random_tensor<T>({3, 6}, r)),
                                       g.constant(random_tensor<T>({6}, r, 0.5, 1.5)), bias, T(1e-5));
                   }});
  cases.push_back({"gelu", mat(3, 4), [](G&, V x, Rng&) { return gelu(x); }});
  cases.push_back({"relu", [](Rng& r) { return kink_free<T>({3, 4}, r); }, [](G&, V x, Rng&) { return relu(x); }});
  cases.push_back({"tanh", mat(3, 4), [](G&, V x, Rng&) { return tanh(x); }});
  cases.push_back({"sigmoid", mat(3, 4), [](G&, V x, Rng&) { return sigmoid(x); }});
  cases.push_back({"exp", mat(3, 4), [](G&, V x, Rng&) { return exp(x); }});
  cases.push_back({"log", [](Rng& r) { return random_tensor<T>({3, 4}, r, 0.5, 2.0); }, [](G&, V x, Rng&) { return log(x); }});
  cases.push_back({"square", mat(3, 4), [](G&, V x, Rng&) { return square(x); }});
  cases.push_back({"embedding", mat(6, 4), [](G&, V table, Rng&) {
                     static const std::int32_t ids[] = {0, 3, 3, 5, 1};
                     return embedding(table, std::span<const std::int32_t>(ids));
                   }});
  cases.push_back({"slice_rows", mat(5, 3), [](G&, V x, Rng&) { return slice_rows(x, 1, 3); }});
  cases.push_back({"slice_cols", mat(3, 6), [](G&, V x, Rng&) { return slice_cols(x, 2, 3); }});
  cases.push_back({"concat_cols", mat(3, 4), [](G& g, V x, Rng& r) {
                     const V parts[] = {x, g.constant(random_tensor<T>({3, 2}, r)), square(x)};
                     return concat_cols<T>(parts);
                   }});
  cases.push_back({"sum", mat(3, 4), [](G&, V x, Rng&) { return sum(square(x)); }});
  cases.push_back({"mean", mat(3, 4), [](G&, V x, Rng&) { return mean(square(x)); }});
  cases.push_back({"row_sum", mat(3, 4), [](G&, V x, Rng&) { return row_sum(x); }});
  cases.push_back({"mse_loss", mat(3, 4), [](G&, V x, Rng& r) { return mse_loss(x, random_tensor<T>({3, 4}, r)); }});
  cases.push_back({"bce_with_logits", [](Rng& r) { return random_tensor<T>({6}, r, -3.0, 3.0); }, [](G&, V x, Rng& r) {
                     Tensor<T> y({6});
                     for (auto& v : y.storage()) v = uniform01(r) < 0.5 ? T(0) : T(1);
                     return bce_with_logits(x, y);
                   }});
  cases.push_back({"bce_masked", [](Rng& r) { return random_tensor<T>({6}, r, -3.0, 3.0); }, [](G&, V x, Rng&) {
                     return bce_with_logits(x, Tensor<T>::vector({1, 0, 1, 1, 0, 0}), Tensor<T>::vector({1, 1, 0, 1, 0, 1}));
                   }});
  cases.push_back({"cross_entropy", mat(4, 5), [](G&, V x, Rng&) {
                     static const std::size_t targets[] = {0, 4, 2, 2};
                     return cross_entropy(x, std::span<const std::size_t>(targets));
                   }});
  return cases;
}

template <typename T>
void check_primitives(double step, double tolerance) {
  for (const auto& c : primitive_cases<T>()) {
    for (int seed = 0; seed < kSeeds; ++seed) {
      Rng point_rng(derive_seed(1000, seed));
      const Tensor<T> point = c.point(point_rng);
      const std::uint64_t body_seed = derive_seed(2000, seed);
      ScalarFunction<T> f = [&](Graph<T>& g, Var<T> x) {
        Rng rng(body_seed);
        Var<T> y = c.body(g, x, rng);
        return y.value().size() == 1 ? y : project(g, y, body_seed + 1);
      };
      const auto r = grad_check<T>(f, point, step);
      EXPECT_LE(r.max_relative_error, tolerance) << c.name << " seed " << seed << " coordinate " << r.worst_index;
    }
  }
}

TEST(GradCheck, PrimitivesFloat) { check_primitives<float>(1e-2, 1e-4); }
TEST(GradCheck, PrimitivesDouble) { check_primitives<double>(1e-5, 1e-6); }

TEST(GradCheck, DetectsAWrongGradient) {
  // A function whose recorded backward is off by a factor of two must fail.
  ScalarFunction<double> f = [](Graph<double>& g, Var<double> x) {
    Tensor<double> v({1}, {x.value()[0] * x.value()[0]});
    auto y = g.record(std::move(v), {x}, [x](Graph<double>& gr, std::size_t self) {
      gr.grad_buffer(x.id())[0] += 4.0 * x.value()[0] * gr.node_grad(self)[0];
    });
    return y;
  };
  const auto r = grad_check<double>(f, Tensor<double>::vector({0.8}), 1e-5);
  EXPECT_GT(r.max_relative_error, 0.1);
}

// ---- the full model ----------------------------------------------------------------

// relu is only used where the step is small enough that crossing one of its
// kinks is unlikely; at the float step it would be routine.
ModelConfig tiny_config(std::uint64_t seed, bool allow_relu = true) {
  ModelConfig c;
  c.layers = 2;
  c.d_model = 8;
  c.heads = 2;
  c.ff = 12;
  c.vocab_size = 12;
  c.max_len = 16;
  c.dropout = 0.0;
  c.activation = allow_relu && seed % 2 == 1 ? Activation::relu : Activation::gelu;
  c.head = seed % 3 == 0 ? HeadKind::regression : HeadKind::binary;
  c.init_std = 0.3;  // large enough that every layer shapes the output
  return c;
}

EncodedInput tiny_input(Rng& rng) {
  EncodedInput in;
  const std::size_t s = 2 + uniform_index(rng, 3), t = 2 + uniform_index(rng, 3);
  auto push = [&](std::int32_t id, Segment seg, std::optional<WordRef> ref) {
    in.ids.push_back(id);
    in.segments.push_back(seg);
    in.spans.push_back(ref);
  };
  push(special::cls, Segment::special, std::nullopt);
  for (std::size_t i = 0; i < s; ++i)
    push(static_cast<std::int32_t>(special::count + uniform_index(rng, 7)), Segment::source, WordRef{Side::source, i});
  push(special::sep, Segment::special, std::nullopt);
  for (std::size_t i = 0; i < t; ++i)
    push(static_cast<std::int32_t>(special::count + uniform_index(rng, 7)), Segment::target, WordRef{Side::target, i});
  push(special::sep, Segment::special, std::nullopt);
  in.source_words = s;
  in.target_words = t;
  return in;
}

template <typename T>
double model_loss(const QeModel<T>& m, const EncodedInput& in, double target) {
  Graph<T> g;
  auto b = m.bind(g, false);
  auto logits = m.forward_logits(b, in, {});
  if (m.config().head == HeadKind::regression) return mse_loss(logits, Tensor<T>::vector({T(target)})).value()[0];
  return bce_with_logits(logits, Tensor<T>::vector({T(target)})).value()[0];
}

template <typename T>
void check_model(double step, double tolerance) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    const ModelConfig cfg = tiny_config(seed, std::is_same_v<T, double>);
    const auto model = QeModel<T>::initialize(cfg, seed);
    Rng rng(derive_seed(77, seed));
    const EncodedInput in = tiny_input(rng);
    const double target = cfg.head == HeadKind::regression ? uniform01(rng) : double(seed % 2);

    Graph<T> g;
    auto b = model.bind(g, true);
    auto logits = model.forward_logits(b, in, {});
    auto loss = cfg.head == HeadKind::regression ? mse_loss(logits, Tensor<T>::vector({T(target)}))
                                                 : bce_with_logits(logits, Tensor<T>::vector({T(target)}));
    g.backward(loss);

    double worst = 0.0;
    std::string where;
    for (std::size_t p = 0; p < model.parameters().size(); ++p) {
      const Tensor<T> analytic = g.grad(b.p[p]);
      // Three coordinates per tensor keeps the suite fast while touching every parameter.
      for (int k = 0; k < 3; ++k) {
        const std::size_t i = uniform_index(rng, analytic.size());
        // Five-point central stencil; the float step leaves too much truncation
        // error for the three-point one.
        auto at = [&](int k) {
          QeModel<T> moved = model;
          moved.mutable_parameters()[p][i] += T(k * step);
          return model_loss(moved, in, target);
        };
        QeModel<T> up = model, down = model;
        up.mutable_parameters()[p][i] += T(step);
        down.mutable_parameters()[p][i] -= T(step);
        const double h = (double(up.parameters()[p][i]) - double(down.parameters()[p][i])) / 2.0;
        const double numeric = (8.0 * (at(1) - at(-1)) - (at(2) - at(-2))) / (12.0 * h);
        const double a = analytic[i];
        const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
        if (err > worst) {
          worst = err;
          where = model.parameters().name(p) + "[" + std::to_string(i) + "]";
        }
      }
    }
    EXPECT_LE(worst, tolerance) << "seed " << seed << " at " << where;
  }
}

TEST(GradCheck, FullModelFloat) { check_model<float>(1e-2, 1e-4); }
TEST(GradCheck, FullModelDouble) { check_model<double>(1e-5, 1e-6); }

TEST(GradCheck, GradientFromHiddenMatchesFiniteDifferences) {
  const auto model = QeModel<double>::initialize(tiny_config(1), 5);
  Rng rng(9);
  const auto trace = model.encode_and_predict(tiny_input(rng));
  for (std::size_t layer = 0; layer <= 2; ++layer) {
    const auto [value, grad] = model.gradient_from_hidden(layer, trace.hidden[layer]);
    EXPECT_EQ(value, trace.prediction);
    for (std::size_t i = 0; i < grad.size(); i += 3) {
      Tensor<double> up = trace.hidden[layer], down = trace.hidden[layer];
      up[i] += 1e-5;
      down[i] -= 1e-5;
      const double numeric = (model.predict_from_hidden(layer, up) - model.predict_from_hidden(layer, down)) / 2e-5;
      EXPECT_NEAR(grad[i], numeric, 1e-6 * std::max(1.0, std::abs(numeric))) << "layer " << layer << " index " << i;
    }
  }
}

}  // namespace
}  // namespace attriqe::ad
