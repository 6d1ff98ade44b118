#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sparsebody::ad {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Identifiers of the differentiable primitives. Every tape node carries one.
enum class Primitive {
  kVariable,
  kAdd,
  kSubtract,
  kMultiply,
  kAddBias,
  kScale,
  kMatMul,
  kSoftmax,
  kRelu,
  kAbs,
  kMaxConstant,
  kMinOverSets,
  kSum,
  kMean,
  kGather,
  kConcatenate,
  kDropout,
  kCompose,
  kQuatNormalize,
  kQuatToRotation,
  kReshape,
  kTransposeLast2,
};

class Tape;

/// Dense row-major array of doubles with an immutable shape. Values are shared
/// between copies; a tensor that was produced while recording carries the
/// handle of its tape node.
class Tensor {
 public:
  /// Scalar zero.
  Tensor();
  Tensor(Shape shape, Array data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_matrix(const Eigen::Ref<const RowMatrix>& m);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  /// Extent along `axis`; negative axes count from the back.
  Index dim(Index axis) const;
  Index size() const { return data_->size(); }

  const Array& data() const { return *data_; }
  double operator[](Index i) const { return (*data_)[i]; }
  /// Value of a single-element tensor.
  double item() const;

  /// Row-major view of the data as rows x cols (rows*cols must equal size()).
  Eigen::Map<const RowMatrix> as_matrix(Index rows, Index cols) const;

  bool on_tape() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  /// Same value, disconnected from any tape.
  Tensor detach() const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const Array> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

/// Receives dL/d(output) and accumulates dL/d(input_k) into grad_inputs[k].
/// Entries for inputs that are not on the tape are null.
using BackwardFn = std::function<void(const Array& grad_output, std::span<Array* const> grad_inputs)>;

class Gradients;

/// Append-only record of primitive applications. One training step owns one
/// tape; a tape must outlive every tensor recorded on it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a differentiable leaf.
  Tensor variable(const Tensor& value);

  /// Used by primitives: attaches `value` to the tape shared by `inputs` (if
  /// any input is recorded) and stores the backward rule.
  static Tensor record(Primitive op, std::span<const Tensor> inputs, Tensor value, BackwardFn backward);

  /// Reverse sweep from a scalar root recorded on this tape.
  Gradients backward(const Tensor& root) const;

  std::size_t size() const { return nodes_.size(); }
  Primitive op(int node) const { return nodes_.at(static_cast<std::size_t>(node)).op; }

  /// Primitives call this when they were evaluated exactly at a kink (tie in
  /// a min, absolute value at zero, ...). grad_check uses it to skip points.
  void note_nondifferentiable(Primitive op);
  int nondifferentiable_count() const { return kinks_; }

 private:
  struct Node {
    Primitive op;
    std::vector<int> inputs;
    Index size;
    Shape shape;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  int kinks_ = 0;
};

/// Result of a backward pass: one accumulator per tape node.
class Gradients {
 public:
  /// Gradient with respect to `x` (zeros when the root does not depend on x).
  Tensor operator[](const Tensor& x) const;
  bool touched(const Tensor& x) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Array> grads_;
  std::vector<Shape> shapes_;
};

/// Notes a kink on the tape of `t` when it is recorded; no-op otherwise.
void note_nondifferentiable(const Tensor& t, Primitive op);

}  // namespace sparsebody::ad
