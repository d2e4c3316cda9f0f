#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "great/tensor.hpp"

namespace great::ad {

class Tape;

/// Handle to a tensor recorded on a tape. Cheap to copy; valid as long as the
/// tape that produced it.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Operations append nodes in evaluation order, so every
/// node's inputs precede it and a single reverse sweep visits each node once.
/// A tape is not thread-safe; use one tape per worker.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(64); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  /// Gradient of the last backward() target with respect to node `id`. Zero
  /// if the node was not reachable from it.
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss);

  /// Hash of every recorded branch decision (ReLU/abs signs, pooling argmax).
  /// Two evaluations with equal signatures ran through the same linear piece.
  std::uint64_t kink_signature() const { return kink_hash_; }

  // Op implementation hooks.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Tensor& grad_buffer(std::size_t id);
  bool needs_grad(Var v) const { return nodes_[v.id].requires_grad; }
  void mix_kink(std::uint64_t bits);

 private:
  struct Node {
    Tensor value;
    mutable Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::uint64_t kink_hash_ = 14695981039346656037ULL;
};

Var matmul(Var a, Var b);
/// Adds a bias vector along the last axis.
Var add_bias(Var a, Var bias);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);
Var abs(Var a);
Var square(Var a);
/// Sum of all elements, as a [1] tensor.
Var sum(Var a);
/// Sum over all axes but the first: [n x ...] -> [n].
Var row_sum(Var a);
Var reshape(Var a, Shape shape);
/// Flattens every axis after the first: [n x ...] -> [n x d].
Var flatten(Var a);
Var gather_rows(Var a, std::span<const std::size_t> rows);
/// Mean over rows of -log softmax(logits)[label]; logits are [n x c].
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
/// Valid-padding, stride-1 cross-correlation. input [n,h,w,cin], kernel [kh,kw,cin,cout].
Var conv2d(Var input, Var kernel);
/// Non-overlapping max pooling over [n,h,w,c]; the window must divide h and w.
Var max_pool2d(Var input, std::size_t window);

struct BatchStats {
  Tensor mean;
  Tensor variance;
};
/// Normalizes over every axis but the last using batch statistics.
Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats);
/// Normalizes with fixed statistics.
Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& variance,
                    double eps);

}  // namespace great::ad
