#include "attriqe/graph.hpp"

namespace attriqe::ad {

template <typename T>
Var<T> Graph<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::variable(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::input(Tensor<T> value) {
  const bool rg = value.requires_grad();
  Node n;
  n.owned = std::move(value);
  n.requires_grad = rg;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::external(const Tensor<T>& value, bool requires_grad) {
  Node n;
  n.external = &value;
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

template <typename T>
const Tensor<T>& Graph<T>::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
  return record(std::move(value), std::span<const Var<T>>(parents.begin(), parents.size()),
                std::move(fn));
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::span<const Var<T>> parents, BackwardFn fn) {
  if (backward_done_) {
    throw StateError("cannot extend a graph after backward(); build a new graph");
  }
  Node n;
  n.owned = std::move(value);
  for (const auto& p : parents) {
    if (p.graph_ != this) throw ContractError("operand belongs to a different graph");
    n.requires_grad = n.requires_grad || nodes_[p.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> output) {
  if (output.graph_ != this) throw ContractError("backward output belongs to a different graph");
  if (value(output.id_).size() != 1) {
    throw ContractError("backward requires a scalar output, got shape " +
                        to_string(value(output.id_).shape()));
  }
  if (backward_done_) {
    throw StateError("backward called twice without reset_grads()");
  }
  backward_done_ = true;
  if (!nodes_[output.id_].requires_grad) return;
  grad_buffer(output.id_)[0] = T(1);
  for (std::size_t i = output.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
}

template <typename T>
void Graph<T>::reset_grads() {
  for (auto& n : nodes_) n.grad = Tensor<T>();
  backward_done_ = false;
}

template <typename T>
const Tensor<T>& Graph<T>::grad(Var<T> v) {
  if (v.graph_ != this) throw ContractError("variable belongs to a different graph");
  if (!backward_done_) throw StateError("gradient requested before backward()");
  if (!nodes_[v.id_].requires_grad) {
    throw StateError("gradient requested for a node that does not require one");
  }
  return grad_buffer(v.id_);
}

template class Graph<float>;
template class Graph<double>;

}  // namespace attriqe::ad
