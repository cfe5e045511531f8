#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "twostream/errors.hpp"

namespace twostream {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
};

}  // namespace detail

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Dense row-major array that records the operations producing it so that
/// gradients can be pulled back with backward(). Copies share the node.
template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using NodeT = detail::Node<S>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto node = std::make_shared<NodeT>();
    node->data.assign(shape_numel(shape), S(0));
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, S value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<NodeT>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const {
    const int r = rank();
    return node_->shape.at(static_cast<std::size_t>(i < 0 ? i + r : i));
  }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<S> data() { return node_->data; }
  std::span<const S> data() const { return node_->data; }
  std::vector<S>& values() { return node_->data; }
  const std::vector<S>& values() const { return node_->data; }
  S item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  S operator[](std::size_t i) const { return node_->data[i]; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const S> grad() const { return node_->grad; }
  std::span<S> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    return *this;
  }
  bool is_leaf() const { return node_->is_leaf(); }

  // Graph handle; stable for the lifetime of the node.
  const void* node_id() const { return node_.get(); }
  const std::shared_ptr<NodeT>& node() const { return node_; }

  // Constant copy outside the graph.
  Tensor detach() const { return from(shape(), node_->data, false); }

  /// Populates grad on every requires_grad node reachable from this scalar.
  /// Leaf gradients accumulate across calls; interior gradients are reset
  /// at the start of each call.
  void backward() const {
    if (numel() != 1) {
      throw UsageError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (!node_->requires_grad) return;

    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        NodeT* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    for (NodeT* n : order) {
      if (!n->is_leaf()) n->grad.assign(n->data.size(), S(0));
    }
    node_->ensure_grad();
    node_->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
    }
  }

 private:
  std::shared_ptr<NodeT> node_;
};

namespace detail {

// Builds an op result. Parents and the backward closure are recorded only
// when grad mode is on and some parent requires grad.
template <typename S>
Tensor<S> make_result(Shape shape, std::vector<S> data,
                      std::vector<std::shared_ptr<Node<S>>> parents,
                      std::function<void(Node<S>&)> backward_fn) {
  auto node = std::make_shared<Node<S>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  if (grad_mode_flag()) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<S>(std::move(node));
}

// Grad buffer of a parent that takes part in differentiation, else null.
template <typename S>
S* grad_of(Node<S>& n) {
  if (!n.requires_grad) return nullptr;
  n.ensure_grad();
  return n.grad.data();
}

}  // namespace detail
}  // namespace twostream
