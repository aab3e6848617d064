#include "mcgkt/tensor.hpp"

#include <sstream>

namespace mcgkt {

std::string Shape::str() const {
  std::ostringstream os;
  os << "[" << n << "," << c << "," << h << "," << w << "]";
  return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return from(shape, Array::Zero(shape.numel()), requires_grad);
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
  return from(shape, Array::Constant(shape.numel(), value), requires_grad);
}

Tensor Tensor::from(const Shape& shape, Array values, bool requires_grad) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1)
    throw ShapeError("tensor: non-positive extent in shape " + shape.str());
  if (values.size() != shape.numel())
    throw ShapeError("tensor: value count " + std::to_string(values.size()) +
                     " does not match shape " + shape.str());
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = shape;
  t.node_->values = std::move(values);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value) {
  return full(Shape{1, 1, 1, 1}, value);
}

float& Tensor::at(Index n, Index c, Index y, Index x) {
  const Shape& s = node_->shape;
  return node_->values[((n * s.c + c) * s.h + y) * s.w + x];
}

float Tensor::at(Index n, Index c, Index y, Index x) const {
  const Shape& s = node_->shape;
  return node_->values[((n * s.c + c) * s.h + y) * s.w + x];
}

void Tensor::set_requires_grad(bool on) {
  if (node_->tape_id >= 0)
    throw UsageError("tensor: requires_grad is fixed once produced by an operation");
  if (!on && node_->has_grad) clear_grad();
  node_->requires_grad = on;
}

const Array& Tensor::grad() const {
  if (!node_->has_grad) throw UsageError("tensor: no gradient buffer present");
  return node_->grad;
}

Array& Tensor::ensure_grad() {
  if (!node_->requires_grad)
    throw UsageError("tensor: gradient requested on a tensor that does not require one");
  if (!node_->has_grad) {
    node_->grad = Array::Zero(node_->shape.numel());
    node_->has_grad = true;
  }
  return node_->grad;
}

void Tensor::accumulate_grad(const Array& delta) {
  if (!node_->requires_grad) return;
  ensure_grad() += delta;
}

void Tensor::clear_grad() {
  node_->grad.resize(0);
  node_->has_grad = false;
}

Tensor Tape::emit(const Shape& shape, Array values, std::vector<Tensor> inputs, BackwardFn backward) {
  bool needs_grad = false;
  for (const Tensor& t : inputs)
    if (t.defined() && t.requires_grad()) needs_grad = true;

  Tensor out = Tensor::from(shape, std::move(values), needs_grad);
  if (needs_grad) {
    out.node_->tape_id = static_cast<int>(records_.size());
    records_.push_back(Record{std::move(inputs), out, std::move(backward)});
  }
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward: loss must be a scalar tensor");
  int id = loss.tape_id();
  if (id < 0 || id >= static_cast<int>(records_.size()) || !records_[id].output.same_node(loss))
    throw UsageError("backward: loss was not produced on this tape");

  Tensor seed = loss;
  seed.ensure_grad() = Array::Ones(1);

  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // no downstream contribution
    it->fn(it->output.grad(), it->inputs, it->output);
  }
}

}  // namespace mcgkt
