#pragma once

// Minimal reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a shared handle to a graph node. Ops record their parents and a
// backward closure only when at least one input requires a gradient and
// recording is enabled (see NoGradGuard). Calling backward() on a scalar Var
// topologically sorts the recorded graph and accumulates into every node's
// grad buffer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hdvp/core/tensor.hpp"

namespace hdvp {

/// Live/peak element counts of non-parameter node values on this thread.
/// This is the activation footprint used by the memory accounting in eval.
struct ActivationMeter {
  std::int64_t live = 0;
  std::int64_t peak = 0;

  void add(std::int64_t n) {
    live += n;
    peak = std::max(peak, live);
  }
  void remove(std::int64_t n) { live -= n; }
  void reset_peak() { peak = live; }

  static ActivationMeter& local() {
    thread_local ActivationMeter meter;
    return meter;
  }
};

struct GradMode {
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  bool is_param = false;

  Node(Tensor<T> v, bool req, bool param)
      : value(std::move(v)), requires_grad(req), is_param(param) {
    if (!is_param) ActivationMeter::local().add(value.numel());
  }
  ~Node() {
    if (!is_param) ActivationMeter::local().remove(value.numel());
  }
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  Tensor<T>& grad_buffer() {
    if (grad.numel() != value.numel()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  /// Constant leaf (never receives a gradient).
  static Var constant(Tensor<T> v) {
    return Var(std::make_shared<Node<T>>(std::move(v), false, false));
  }
  /// Leaf that accumulates a gradient, e.g. an input probed by a gradient check.
  static Var leaf(Tensor<T> v) {
    return Var(std::make_shared<Node<T>>(std::move(v), true, false));
  }
  /// Trainable parameter. Excluded from the activation meter.
  static Var parameter(Tensor<T> v) {
    return Var(std::make_shared<Node<T>>(std::move(v), true, true));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(std::size_t i) const { return node_->value.dim(i); }
  std::int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() {
    if (node_->grad.numel()) node_->grad.fill(T(0));
  }
  T item() const {
    require(numel() == 1, ErrorKind::kShape, "item() on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }
  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates the result node of an op. `backward` receives the result node whose
/// grad is populated and must accumulate into the parents it needs.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  bool req = false;
  if (GradMode::enabled()) {
    for (const auto& v : inputs) req = req || v.requires_grad();
  }
  auto node = std::make_shared<Node<T>>(std::move(value), req, false);
  if (req) {
    node->parents.reserve(inputs.size());
    for (auto& v : inputs) node->parents.push_back(v.ptr());
    node->backward_fn = std::move(backward);
  }
  return Var<T>(std::move(node));
}

/// Accumulate d(root)/d(node) for every node reachable from `root`.
template <class T>
void backward(const Var<T>& root) {
  require(root.numel() == 1, ErrorKind::kShape, "backward() requires a scalar root");
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.numel()) n->backward_fn(*n);
  }
}

/// Gradient accumulation helper: returns the parent's grad buffer if it wants one.
template <class T>
Tensor<T>* grad_of(Node<T>& result, std::size_t parent_index) {
  auto& p = result.parents[parent_index];
  if (!p->requires_grad) return nullptr;
  return &p->grad_buffer();
}

}  // namespace hdvp
