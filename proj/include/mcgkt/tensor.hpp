#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mcgkt/errors.hpp"

namespace mcgkt {

using Index = Eigen::Index;
using Array = Eigen::ArrayXf;

// Dense 4-D extents in (batch, channel, height, width) order. Kernel stacks
// reuse the same type as [out_channels, in_channels, kh, kw]; per-channel
// vectors as [1, C, 1, 1].
struct Shape {
  Index n = 1, c = 1, h = 1, w = 1;

  Index numel() const { return n * c * h * w; }
  Index plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tape;

// Value-semantic handle onto a shared tensor node: float32 values in row-major
// (n, c, h, w) order plus an optional same-shape gradient buffer. Values are
// written at creation (or by the owner of a leaf); once an operation has
// consumed a tensor, only its grad buffer mutates.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, float value, bool requires_grad = false);
  static Tensor from(const Shape& shape, Array values, bool requires_grad = false);
  static Tensor scalar(float value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index numel() const { return node_->shape.numel(); }

  Array& values() { return node_->values; }
  const Array& values() const { return node_->values; }

  // Element access by coordinates; convenience for construction and tests.
  float& at(Index n, Index c, Index y, Index x);
  float at(Index n, Index c, Index y, Index x) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);

  bool has_grad() const { return node_->has_grad; }
  const Array& grad() const;
  // Creates a zeroed grad buffer on demand. Only legal on tensors that
  // require gradients.
  Array& ensure_grad();
  void accumulate_grad(const Array& delta);
  void clear_grad();

  // Index of the producing operation on its tape; -1 for leaves.
  int tape_id() const { return node_->tape_id; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  friend class Tape;
  struct Node {
    Shape shape;
    Array values;
    Array grad;
    bool has_grad = false;
    bool requires_grad = false;
    int tape_id = -1;
  };
  std::shared_ptr<Node> node_;
};

// Record of one training step's forward pass. Operations append in execution
// order, which is topological by construction; backward() replays the list in
// reverse exactly once, accumulating (summing) gradients into every reachable
// tensor that requires them. A tape and its tensors belong to one step and one
// executor at a time.
class Tape {
 public:
  // Receives the output gradient and adds each input's contribution into its
  // grad buffer. `inputs` are the tensors passed to emit(), in order.
  using BackwardFn =
      std::function<void(const Array& upstream, std::vector<Tensor>& inputs, const Tensor& output)>;

  // Creates the output tensor of an operation. The result requires a gradient
  // (and the operation is recorded) iff some input does.
  Tensor emit(const Shape& shape, Array values, std::vector<Tensor> inputs, BackwardFn backward);

  // Reverse-mode sweep from a scalar loss produced on this tape.
  void backward(const Tensor& loss);

  std::size_t recorded_ops() const { return records_.size(); }

 private:
  struct Record {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Record> records_;
};

}  // namespace mcgkt
