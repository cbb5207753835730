#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "spatioformer/error.hpp"

namespace spatioformer::numerics {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

// One vertex of the recorded computation graph. Leaves have no parents.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major tensor of doubles with reverse-mode gradient support.
// Copies share the underlying node; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (auto extent : shape) {
      if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_size(shape) != values.size()) {
      throw ShapeError("tensor of shape " + shape_str(shape) + " given " + std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  // Mutable access is meant for leaves (initialisation, optimiser updates,
  // running statistics); mutating an interior node invalidates its graph.
  std::span<double> mutable_values() { return node_->value; }

  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  Tensor clone() const { return Tensor(shape(), node_->value, requires_grad()); }
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  // Reverse pass from a single-element tensor. Leaf gradients accumulate
  // across calls until zero_grad().
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value produced");
  }
}

// Builds an operation result; the backward closure is kept only if some input
// needs gradients.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward_fn) {
  check_finite(values, op);
  Tensor out(std::move(shape), std::move(values));
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    auto& n = *out.node();
    n.requires_grad = true;
    for (const auto& t : inputs) n.parents.push_back(t.node());
    n.backward_fn = std::move(backward_fn);
  }
  return out;
}

}  // namespace detail

inline void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward() requires a single-element tensor, got " + shape_str(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      auto* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (!n->backward_fn) continue;
    n->ensure_grad();
    for (auto& p : n->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    n->backward_fn(*n);
  }
  // Interior gradients are not needed after the pass.
  for (auto* n : order) {
    if (n->backward_fn) n->grad.clear();
  }
}

}  // namespace spatioformer::numerics
