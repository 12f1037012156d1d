#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "advdev/tensor.hpp"

namespace advdev {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the upstream gradient and accumulates into the gradient slot of each
/// input. A slot is null when that input does not need a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_inputs)>;

/// Gradients of a scalar root with respect to every leaf that requires them.
class Gradients {
 public:
  /// Throws if `leaf` was not a gradient-requiring leaf.
  const Tensor& of(const Var& leaf) const&;
  Tensor of(const Var& leaf) &&;
  bool has(const Var& leaf) const;

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> grads_;
};

/// Append-only record of primitive applications. Node ids are assigned in
/// creation order, so every node's inputs precede it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records a node computed from `inputs`. `backward` may be empty when no input
  /// requires a gradient.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  Gradients backward(const Var& root) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  std::deque<Node> nodes_;
};

// Differentiable counterparts of the tensor kernels. Forward values are produced
// by the same kernels, so Var and Tensor paths agree bit for bit.

Var conv2d(const Var& input, const Var& weights, const Var& bias, std::size_t stride,
           std::size_t pad);
Var dense(const Var& input, const Var& weights, const Var& bias);
Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var global_avg_pool(const Var& x);
Var softmax(const Var& logits);
/// Scalar softmax cross-entropy; gradient is softmax(logits) - one_hot(label).
Var cross_entropy(const Var& logits, std::size_t label);
Var sum(const Var& x);
Var scale(const Var& x, double factor);
/// Elementwise (tanh(x) + 1) / 2, mapping the real line into the open unit box.
Var tanh_box(const Var& x);
/// Scalar ||x - target||^2.
Var squared_distance(const Var& x, const Tensor& target);

}  // namespace advdev
