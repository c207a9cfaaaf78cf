#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lcl/core/ndarray.hpp"

namespace lcl {

template <typename T>
struct Node;

namespace detail {
inline std::uint64_t next_node_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

/// One recorded operation. Nodes are numbered at creation, and an op's inputs
/// always exist before its output, so sequence order is a topological order.
template <typename T>
struct Node {
  NDArray<T> value;
  NDArray<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::uint64_t seq = detail::next_node_seq();
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Receives this node; reads `grad` and accumulates into parents.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const noexcept { return parents.empty(); }

  void accumulate(const NDArray<T>& delta) {
    if (!requires_grad) return;
    if (!has_grad) {
      grad = delta;
      has_grad = true;
      return;
    }
    T* g = grad.ptr();
    const T* d = delta.ptr();
    for (std::size_t i = 0, n = grad.numel(); i < n; ++i) g[i] += d[i];
  }

  /// Accumulates via a callback writing into the (zero-initialized) grad buffer.
  template <typename F>
  void accumulate_with(F&& write) {
    if (!requires_grad) return;
    if (!has_grad) {
      grad = NDArray<T>(value.shape());
      has_grad = true;
    }
    write(grad);
  }
};

/// Differentiable handle over a shared node. Copies alias the same node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(NDArray<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor constant(NDArray<T> value) { return Tensor(std::move(value), false); }
  static Tensor parameter(NDArray<T> value) { return Tensor(std::move(value), true); }

  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const NDArray<T>& value() const { return node_->value; }
  /// Mutable access for optimizers and perturbation checks; leaves only.
  NDArray<T>& mutable_value() {
    if (!node_->is_leaf()) throw std::logic_error("mutable_value: only leaf tensors may be modified in place");
    return node_->value;
  }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }
  std::size_t dim(int axis) const { return node_->value.dim(axis); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
  }

  bool has_grad() const noexcept { return node_ && node_->has_grad; }

  /// Gradient accumulated by backward. Zeros if the tensor was not reached.
  const NDArray<T>& grad() const {
    if (!requires_grad()) throw std::logic_error("grad: tensor does not require grad");
    if (!node_->has_grad && node_->grad.shape() != shape()) node_->grad = NDArray<T>(shape());
    return node_->grad;
  }

  void zero_grad() {
    if (!node_) return;
    node_->grad = NDArray<T>();
    node_->has_grad = false;
  }

  Tensor detach() const { return Tensor(node_->value, false); }

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {
/// Nodes reachable from `root` through requires_grad edges, in creation order.
template <typename T>
std::vector<Node<T>*> reachable_in_order(Node<T>* root) {
  std::unordered_set<Node<T>*> seen{root};
  std::vector<Node<T>*> stack{root};
  std::vector<Node<T>*> order;
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->seq < b->seq; });
  return order;
}
}  // namespace detail

/// Ordered record of the ops reachable from a loss, in execution order.
template <typename T>
struct ComputationTape {
  std::vector<Node<T>*> ops;

  static ComputationTape from(const Tensor<T>& root) { return ComputationTape{detail::reachable_in_order(root.node())}; }
};

/// Reverse-mode pass from a scalar loss. Leaf gradients accumulate across
/// calls until zero_grad; intermediate gradients are reset per call.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw std::logic_error("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw std::logic_error("backward: loss is not connected to any parameter");

  const std::vector<Node<T>*> order = detail::reachable_in_order(loss.node());
  for (Node<T>* n : order) {
    if (!n->is_leaf()) {
      n->grad = NDArray<T>();
      n->has_grad = false;
    }
  }
  Node<T>* root = loss.node();
  root->accumulate(NDArray<T>(root->value.shape(), T(1)));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->is_leaf() || !n->has_grad || !n->backward_fn) continue;
    n->backward_fn(*n);
  }
  // Release intermediate buffers; leaves keep their accumulated gradient.
  for (Node<T>* n : order) {
    if (!n->is_leaf()) {
      n->grad = NDArray<T>();
      n->has_grad = false;
    }
  }
}

}  // namespace lcl
