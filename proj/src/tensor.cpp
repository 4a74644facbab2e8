#include "ecg/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace ecg::nn {

namespace {
Precision g_precision = Precision::f64;
}

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

void quantize(std::vector<double>& values) {
  if (g_precision == Precision::f64) return;
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

TensorPtr Tensor::create(Shape shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->value.resize(shape_size(shape));
  t->shape = std::move(shape);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::from_values(Shape shape, std::vector<double> values,
                              bool requires_grad) {
  if (values.size() != shape_size(shape))
    throw ShapeMismatch("value count " + std::to_string(values.size()) +
                        " != shape " + shape_str(shape));
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->value = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::zeros(Shape shape, bool requires_grad) {
  return create(std::move(shape), requires_grad);
}

TensorPtr Tensor::scalar(double v, bool requires_grad) {
  return from_values({1}, {v}, requires_grad);
}

void Tensor::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(value.size(), 0.0); }

TensorPtr Tensor::detach(bool requires_grad) const {
  return from_values(shape, value, requires_grad);
}

void backward(const TensorPtr& root) {
  if (root->size() != 1)
    throw ShapeMismatch("backward root must be scalar, got " +
                        shape_str(root->shape));

  // Iterative DFS post-order.
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> seen;
  std::vector<std::pair<Tensor*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor* p = node->parents[next].get();
      ++next;
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior node gradients are per-sweep scratch; leaf gradients keep
  // accumulating across sweeps.
  for (Tensor* t : order) {
    if (t->backward_fn)
      t->zero_grad();
    else
      t->ensure_grad();
  }
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor* t = *it;
    if (t->backward_fn && t->requires_grad) {
      quantize(t->grad);
      t->backward_fn();
    }
  }
  if (precision() == Precision::f32)
    for (Tensor* t : order) quantize(t->grad);
}

}  // namespace ecg::nn
