#include "volumix/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace volumix {

namespace {
thread_local bool g_grad_enabled = true;
bool g_finite_f32 = false;
bool g_finite_f64 = true;

template <typename S>
void check_finite(const char* op, const std::vector<S>& v) {
  for (S x : v) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}
}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

template <>
void set_finite_checks<float>(bool on) { g_finite_f32 = on; }
template <>
void set_finite_checks<double>(bool on) { g_finite_f64 = on; }
template <>
bool finite_checks<float>() { return g_finite_f32; }
template <>
bool finite_checks<double>() { return g_finite_f64; }

template <typename S>
Tensor<S> Tensor<S>::zeros(Shape shape) {
  auto n = std::make_shared<Node<S>>();
  n->value.assign(static_cast<size_t>(volumix::numel(shape)), S(0));
  n->shape = std::move(shape);
  return Tensor<S>(std::move(n));
}

template <typename S>
Tensor<S> Tensor<S>::full(Shape shape, S v) {
  auto n = std::make_shared<Node<S>>();
  n->value.assign(static_cast<size_t>(volumix::numel(shape)), v);
  n->shape = std::move(shape);
  return Tensor<S>(std::move(n));
}

template <typename S>
Tensor<S> Tensor<S>::from(Shape shape, std::vector<S> data) {
  if (volumix::numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("tensor data size " + std::to_string(data.size()) +
                     " does not match shape " + str(shape));
  }
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  return Tensor<S>(std::move(n));
}

template <typename S>
Tensor<S> Tensor<S>::param(Shape shape, std::vector<S> data) {
  Tensor<S> t = from(std::move(shape), std::move(data));
  t.node()->requires_grad = true;
  return t;
}

template <typename S>
S Tensor<S>::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + str(shape()));
  return n_->value[0];
}

template <typename S>
void Tensor<S>::zero_grad() {
  n_->grad.assign(n_->value.size(), S(0));
}

template <typename S>
Tensor<S> Tensor<S>::detach() const {
  auto n = std::make_shared<Node<S>>();
  n->shape = n_->shape;
  n->value = n_->value;
  return Tensor<S>(std::move(n));
}

template <typename S>
void Tensor<S>::backward() {
  if (numel() != 1) throw ShapeError("backward() requires a scalar root, got " + str(shape()));
  if (!n_->requires_grad) return;

  // Iterative post-order over grad-requiring parents.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  struct Frame {
    Node<S>* n;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({n_.get(), 0});
  seen.insert(n_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node<S>* p = f.n->parents[f.next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  n_->ensure_grad();
  n_->grad[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* node = *it;
    if (!node->backward) continue;
    // Closures may write any parent's grad; heavy ops skip work for parents
    // that do not require grad.
    for (auto& p : node->parents) p->ensure_grad();
    node->backward(*node);
  }
}

template <typename S>
Tensor<S> make_node(const char* op, Shape shape, std::vector<S> value,
                    std::vector<Tensor<S>> parents,
                    std::function<void(Node<S>&)> backward) {
  if (volumix::numel(shape) != static_cast<int64_t>(value.size())) {
    throw ShapeError(std::string(op) + ": value size does not match shape " + str(shape));
  }
  if (finite_checks<S>()) check_finite(op, value);
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool need = false;
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p.defined() && p.requires_grad()) need = true;
    }
  }
  if (need) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return Tensor<S>(std::move(n));
}

template struct Node<float>;
template struct Node<double>;
template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_node<float>(const char*, Shape, std::vector<float>,
                                        std::vector<Tensor<float>>,
                                        std::function<void(Node<float>&)>);
template Tensor<double> make_node<double>(const char*, Shape, std::vector<double>,
                                          std::vector<Tensor<double>>,
                                          std::function<void(Node<double>&)>);

}  // namespace volumix
