#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ecg/errors.hpp"

namespace ecg::nn {

// f32 mode rounds every op output and gradient through float; f64 is the
// verification mode used by the gradient-check suites.
enum class Precision { f64, f32 };

void set_precision(Precision p);
Precision precision();

// Rounds in place when the engine is in f32 mode.
void quantize(std::vector<double>& values);

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// A reverse-mode graph node. Ops allocate the output tensor, fill value,
// connect parents, and install backward_fn, which reads this->grad and
// accumulates (never overwrites) into each parent's grad.
class Tensor {
public:
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // same length as value once ensure_grad ran
  bool requires_grad = false;
  std::vector<TensorPtr> parents;
  std::function<void()> backward_fn;

  static TensorPtr create(Shape shape, bool requires_grad = false);
  static TensorPtr from_values(Shape shape, std::vector<double> values,
                               bool requires_grad = false);
  static TensorPtr zeros(Shape shape, bool requires_grad = false);
  static TensorPtr scalar(double v, bool requires_grad = false);

  std::size_t size() const { return value.size(); }
  void ensure_grad();
  void zero_grad();

  // Same values, detached from the graph.
  TensorPtr detach(bool requires_grad = false) const;
};

// Reverse topological sweep from a scalar root; each node's backward_fn
// runs exactly once.
void backward(const TensorPtr& root);

}  // namespace ecg::nn
