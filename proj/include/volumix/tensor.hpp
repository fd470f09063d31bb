#pragma once

// Dense row-major tensor with reverse-mode autodiff, templated on scalar.
// double is the verification precision; float is the training precision.
// Graphs are built define-by-run: every op produces a fresh node holding its
// value, its parents, and a closure that scatters the node's gradient into
// the parents' gradients.

#include <functional>
#include <memory>
#include <vector>

#include "volumix/common.hpp"

namespace volumix {

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // materialized lazily during backward
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node<S>>> parents;
  // Accumulates into parents' grads; receives the node itself.
  std::function<void(Node<S>&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

// Scoped switch that stops graph construction (inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// When on, every op forward throws NumericError on a non-finite output.
// Defaults: on for double, off for float (the trainer checks its loss).
template <typename S>
void set_finite_checks(bool on);
template <typename S>
bool finite_checks();

template <typename S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<S>> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, S v);
  static Tensor from(Shape shape, std::vector<S> data);
  // Leaf with requires_grad set; the unit of trainable state.
  static Tensor param(Shape shape, std::vector<S> data);

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }
  int64_t dim() const { return static_cast<int64_t>(n_->shape.size()); }

  const std::vector<S>& values() const { return n_->value; }
  std::vector<S>& values() { return n_->value; }
  const S* data() const { return n_->value.data(); }
  S* data() { return n_->value.data(); }

  bool requires_grad() const { return n_->requires_grad; }
  const std::vector<S>& grad() const { return n_->grad; }
  std::vector<S>& grad() { return n_->grad; }

  S item() const;

  // Reverse pass from a scalar root (grad seeded with 1).
  void backward();
  void zero_grad();

  // Same value, detached from the graph.
  Tensor detach() const;

  std::shared_ptr<Node<S>> node() const { return n_; }
  Node<S>* raw() const { return n_.get(); }

 private:
  std::shared_ptr<Node<S>> n_;
};

// Builds an op node: computes requires_grad from parents and the grad mode,
// runs the finite check, and drops the closure when grads are off.
template <typename S>
Tensor<S> make_node(const char* op, Shape shape, std::vector<S> value,
                    std::vector<Tensor<S>> parents,
                    std::function<void(Node<S>&)> backward);

extern template struct Node<float>;
extern template struct Node<double>;
extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace volumix
