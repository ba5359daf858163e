#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pabm/common.hpp"
#include "pabm/random.hpp"

namespace pabm {

namespace detail {

struct Node {
  std::vector<size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Global switch for graph recording (single-threaded numeric path).
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording in scope; evaluation-only passes use this.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline size_t numel_of(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

// Dense row-major float64 tensor with reverse-mode differentiation.
// Value-semantic handle to a shared node; ops build the graph through
// parent links, backward() runs reverse topological order and frees the
// graph as it goes. Leaves created with requires_grad keep their gradients
// for the optimizer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    n->value.assign(numel_of(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(std::vector<size_t> shape, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t.node_->value) x = v;
    return t;
  }

  static Tensor from(std::vector<size_t> shape, std::vector<double> data,
                     bool requires_grad = false) {
    check(numel_of(shape) == data.size(), "Tensor::from: shape does not match data length");
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  // Fan-in scaled symmetric uniform init, optionally shrunk (near-zero
  // residual-branch projections use gain << 1).
  static Tensor uniform_init(std::vector<size_t> shape, size_t fan_in, Rng& rng,
                             double gain = 1.0) {
    Tensor t = zeros(std::move(shape), true);
    double bound = gain / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
    for (double& x : t.node_->value) x = rng.uniform(-bound, bound);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<size_t>& shape() const { return node_->shape; }
  size_t size() const { return node_->value.size(); }
  size_t rank() const { return node_->shape.size(); }

  size_t rows() const {
    check(rank() == 2, "rows(): tensor is not rank-2");
    return node_->shape[0];
  }
  size_t cols() const {
    check(rank() == 2, "cols(): tensor is not rank-2");
    return node_->shape[1];
  }

  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }

  double at(size_t r, size_t c) const { return node_->value[r * cols() + c]; }
  double& at(size_t r, size_t c) { return node_->value[r * cols() + c]; }

  double item() const {
    check(size() == 1, "item(): tensor is not scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
  std::vector<double>& grad() {
    check(has_grad(), "grad(): no gradient present (run backward first)");
    return node_->grad;
  }
  const std::vector<double>& grad() const {
    check(has_grad(), "grad(): no gradient present (run backward first)");
    return node_->grad;
  }
  void zero_grad() {
    if (node_) node_->grad.assign(node_->value.size(), 0.0);
  }

  // Reverse-mode pass from a scalar output. Frees the recorded graph
  // (parent links and closures) after use; leaf gradients remain. The topo
  // order holds owning pointers: freeing parent links must not destroy nodes
  // that still await their backprop call.
  void backward() {
    check(size() == 1, "backward(): output is not scalar");
    if (!node_->requires_grad) return;
    std::vector<std::shared_ptr<detail::Node>> order = toposort();
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* nd = it->get();
      if (nd->backprop) {
        nd->ensure_grad();
        for (auto& p : nd->parents)
          if (p->requires_grad) p->ensure_grad();
        nd->backprop(*nd);
      }
      nd->backprop = nullptr;
      nd->parents.clear();
    }
  }

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::vector<std::shared_ptr<detail::Node>> toposort() {
    std::vector<std::shared_ptr<detail::Node>> order;
    std::unordered_set<detail::Node*> seen;
    // Iterative post-order DFS; graphs can be a few thousand nodes deep.
    std::vector<std::pair<std::shared_ptr<detail::Node>, size_t>> stack;
    stack.emplace_back(node_, 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [nd, i] = stack.back();
      if (i < nd->parents.size()) {
        const std::shared_ptr<detail::Node>& p = nd->parents[i++];
        if (p->requires_grad && !seen.count(p.get())) {
          seen.insert(p.get());
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(nd);
        stack.pop_back();
      }
    }
    return order;
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Shared builder for differentiable ops: computes requires_grad, records
// parents and the closure only while grad mode is on.
inline Tensor make_op(std::vector<size_t> shape, std::vector<double> value,
                      std::vector<Tensor> inputs,
                      std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  for (const Tensor& t : inputs) rg = rg || t.requires_grad();
  if (rg && grad_mode()) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n->parents.push_back(t.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

}  // namespace detail

}  // namespace pabm
