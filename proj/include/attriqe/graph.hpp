#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "attriqe/tensor.hpp"

namespace attriqe::ad {

template <typename T>
class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while its graph lives.
template <typename T>
class Var {
 public:
  Var() = default;

  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Tensor<T>& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return graph_->requires_grad(id_); }

 private:
  friend class Graph<T>;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Define-by-run tape. Nodes are appended in creation order, which is a
// topological order, so backward is a single reverse sweep.
//
// A graph is confined to one thread. Parameters can be bound by reference
// (external) so many graphs may read the same model concurrently.
template <typename T>
class Graph {
 public:
  // Propagates the gradient of node `self` into its parents' gradient buffers.
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value);
  // Leaf that honours value.requires_grad().
  Var<T> input(Tensor<T> value);
  // Leaf referencing storage owned elsewhere; the storage must outlive the graph.
  Var<T> external(const Tensor<T>& value, bool requires_grad);

  const Tensor<T>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient of the last backward output with respect to `v`. Leaves that
  // require a gradient but were not reached report zeros.
  const Tensor<T>& grad(Var<T> v);

  // Reverse sweep from a scalar output. A second call without reset() throws.
  void backward(Var<T> output);
  void reset_grads();
  bool has_backward_run() const noexcept { return backward_done_; }

  std::size_t node_count() const noexcept { return nodes_.size(); }

  // Used by operation implementations.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn);
  Var<T> record(Tensor<T> value, std::span<const Var<T>> parents, BackwardFn fn);
  Tensor<T>& grad_buffer(std::size_t id);
  const Tensor<T>& node_grad(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Node node);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---- operations ------------------------------------------------------------
// Shapes follow these rules: elementwise binary ops need identical shapes;
// the only broadcast is add_bias (a bias over the trailing axis) and the
// explicit per-row scale_rows.

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias);
template <typename T> Var<T> scale(Var<T> x, T factor);
template <typename T> Var<T> add_scalar(Var<T> x, T offset);
// y[i, j] = x[i, j] * s[i]; s has one entry per row.
template <typename T> Var<T> scale_rows(Var<T> x, Var<T> s);

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);

template <typename T> Var<T> softmax(Var<T> x, std::size_t axis);
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T epsilon);

template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> tanh(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> exp(Var<T> x);
template <typename T> Var<T> log(Var<T> x);
template <typename T> Var<T> square(Var<T> x);

// Gathers rows of a [V x d] table.
template <typename T> Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids);
template <typename T> Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count);
template <typename T> Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count);
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);

template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
// Per-row sum over the trailing axis: [n x d] -> [n].
template <typename T> Var<T> row_sum(Var<T> x);

template <typename T> Var<T> mse_loss(Var<T> prediction, const Tensor<T>& target);
// Mean binary cross-entropy over positions where mask != 0 (all positions if mask is empty).
template <typename T>
Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& targets, const Tensor<T>& mask = {});
// Mean softmax cross-entropy of [n x C] logits against class ids.
template <typename T> Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> targets);

}  // namespace attriqe::ad
