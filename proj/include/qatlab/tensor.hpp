// Copyright 2026 The qatlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense tensors with define-by-run reverse-mode autodiff.
//
// A Tensor is a shared handle onto a graph node. Every op that produces a
// tensor records its parents and a vector-Jacobian closure when any input
// requires a gradient and grad mode is enabled. backward() replays the
// closures in exact reverse order of forward execution (each node carries a
// monotonically increasing sequence number) and then releases the graph.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "qatlab/common.hpp"

namespace qatlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline std::uint64_t next_sequence() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

inline std::string& op_scope() {
  thread_local std::string scope;
  return scope;
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  std::string op = "leaf";
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const noexcept { return !consumed && !backward_fn && parents.empty(); }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Disables graph recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : saved_(std::exchange(detail::grad_mode_flag(), false)) {}
  ~NoGradGuard() { detail::grad_mode_flag() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Prefixes the names of ops created while alive ("conv3/conv2d"), so
// numeric diagnostics point at a layer.
class OpScope {
 public:
  explicit OpScope(const std::string& name)
      : saved_(std::exchange(detail::op_scope(), detail::op_scope().empty() ? name : detail::op_scope() + "/" + name)) {}
  ~OpScope() { detail::op_scope() = std::move(saved_); }
  OpScope(const OpScope&) = delete;
  OpScope& operator=(const OpScope&) = delete;

 private:
  std::string saved_;
};

template <class T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    }
    for (auto e : shape) {
      if (e == 0) throw DimensionError("zero extent in shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
    node_->seq = detail::next_sequence();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }
  template <class Rng>
  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
    std::normal_distribution<T> dist(T(0), stddev);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }
  template <class Rng>
  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
    std::uniform_real_distribution<T> dist(lo, hi);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }
  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!is_leaf()) throw StateError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return node_->is_leaf(); }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }
  const std::string& op() const { return node_->op; }

  // Deep copy of values, detached from any graph.
  Tensor clone() const { return Tensor(shape(), node_->data, false); }

  // Populates gradients of every requires_grad leaf reachable from this
  // scalar. A second call on the same loss without a new forward pass throws.
  void backward() const;

  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

template <class T>
void check_finite(std::span<const T> values, const std::string& op, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(op, "non-finite " + std::string(what) + " in op '" + op +
                                 "' at element " + std::to_string(i));
    }
  }
}

// Creates the result of an op. `backward` receives the result node and must
// accumulate into the parents' grads (via ensure_grad()). When no parent
// requires a gradient (or grad mode is off), no graph is recorded.
template <class T>
Tensor<T> make_result(std::string op, Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> parents,
                      std::function<void(detail::Node<T>&)> backward) {
  if (!detail::op_scope().empty()) op = detail::op_scope() + "/" + op;
  check_finite<T>(values, op, "value");
  Tensor<T> out(std::move(shape), std::move(values), false);
  auto& node = *out.node();
  node.op = std::move(op);
  const bool track =
      grad_enabled() && std::any_of(parents.begin(), parents.end(),
                                    [](const Tensor<T>& p) { return p.requires_grad(); });
  if (track) {
    for (auto& p : parents) {
      if (p.node()->consumed) {
        throw StateError("op '" + node.op + "' consumes a tensor whose graph was released by backward()");
      }
      node.parents.push_back(p.node());
    }
    node.backward_fn = std::move(backward);
    node.requires_grad = true;
  }
  return out;
}

template <class T>
void Tensor<T>::backward() const {
  if (!node_) throw StateError("backward() on undefined tensor");
  if (numel() != 1) throw DimensionError("backward() requires a scalar loss, got " + shape_str(shape()));
  if (node_->consumed) throw StateError("backward() called twice without a new forward pass");
  if (!node_->requires_grad) throw StateError("backward() on a tensor that does not require grad");

  // Collect every reachable tracked node.
  // Owning pointers keep nodes alive while the graph is released below.
  std::vector<std::shared_ptr<detail::Node<T>>> order;
  std::unordered_set<const detail::Node<T>*> seen;
  std::vector<std::shared_ptr<detail::Node<T>>> stack{node_};
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    for (auto& p : n->parents) {
      if (p->requires_grad) stack.push_back(p);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });

  node_->ensure_grad()[0] += T(1);
  for (auto& n : order) {
    if (!n->backward_fn) continue;
    n->ensure_grad();
    n->backward_fn(*n);
    for (auto& p : n->parents) {
      if (p->requires_grad) check_finite<T>(p->grad, n->op, "gradient");
    }
  }
  for (auto& n : order) {
    if (n->is_leaf()) continue;
    n->consumed = true;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

}  // namespace qatlab
