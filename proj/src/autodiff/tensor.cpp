#include "sparsebody/autodiff/tensor.hpp"

#include "sparsebody/errors.hpp"

#include <sstream>

namespace sparsebody::ad {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : data_(std::make_shared<const Array>(Array::Zero(1))) {}

Tensor::Tensor(Shape shape, Array data) : shape_(std::move(shape)) {
  for (Index d : shape_) {
    if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
  }
  if (shape_size(shape_) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  data_ = std::make_shared<const Array>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) {
  const Index n = shape_size(shape);
  return Tensor(std::move(shape), Array::Zero(n));
}

Tensor Tensor::full(Shape shape, double value) {
  const Index n = shape_size(shape);
  return Tensor(std::move(shape), Array::Constant(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, Array::Constant(1, value)); }

Tensor Tensor::from_matrix(const Eigen::Ref<const RowMatrix>& m) {
  Array data(m.size());
  Eigen::Map<RowMatrix>(data.data(), m.rows(), m.cols()) = m;
  return Tensor({m.rows(), m.cols()}, std::move(data));
}

Index Tensor::dim(Index axis) const {
  const Index r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return (*data_)[0];
}

Eigen::Map<const RowMatrix> Tensor::as_matrix(Index rows, Index cols) const {
  if (rows * cols != size()) {
    throw DimensionError("cannot view " + shape_string(shape_) + " as " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
  return Eigen::Map<const RowMatrix>(data_->data(), rows, cols);
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  return t;
}

Tensor Tape::variable(const Tensor& value) {
  Tensor t = value.detach();
  nodes_.push_back(Node{Primitive::kVariable, {}, t.size(), t.shape(), nullptr});
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size()) - 1;
  return t;
}

Tensor Tape::record(Primitive op, std::span<const Tensor> inputs, Tensor value, BackwardFn backward) {
  Tape* tape = nullptr;
  for (const Tensor& in : inputs) {
    if (!in.on_tape()) continue;
    if (tape && tape != in.tape()) throw ContractViolation("inputs recorded on different tapes");
    tape = in.tape();
  }
  if (!tape) return value;

  Node node{op, {}, value.size(), value.shape(), std::move(backward)};
  node.inputs.reserve(inputs.size());
  for (const Tensor& in : inputs) node.inputs.push_back(in.on_tape() ? in.node() : -1);
  tape->nodes_.push_back(std::move(node));
  value.tape_ = tape;
  value.node_ = static_cast<int>(tape->nodes_.size()) - 1;
  return value;
}

void Tape::note_nondifferentiable(Primitive) { ++kinks_; }

void note_nondifferentiable(const Tensor& t, Primitive op) {
  if (t.on_tape()) t.tape()->note_nondifferentiable(op);
}

Gradients Tape::backward(const Tensor& root) const {
  if (root.size() != 1) {
    throw ContractViolation("backward() needs a scalar root, got shape " + shape_string(root.shape()));
  }
  if (root.tape() != this) throw ContractViolation("backward() root is not recorded on this tape");

  Gradients g;
  g.tape_ = this;
  g.grads_.resize(nodes_.size());
  g.shapes_.reserve(nodes_.size());
  for (const Node& n : nodes_) g.shapes_.push_back(n.shape);

  g.grads_[static_cast<std::size_t>(root.node())] = Array::Ones(1);
  std::vector<Array*> slots;
  for (int i = root.node(); i >= 0; --i) {
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    Array& gout = g.grads_[static_cast<std::size_t>(i)];
    if (gout.size() == 0 || !node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const int j = node.inputs[k];
      if (j < 0) continue;
      Array& gin = g.grads_[static_cast<std::size_t>(j)];
      if (gin.size() == 0) gin = Array::Zero(nodes_[static_cast<std::size_t>(j)].size);
      slots[k] = &gin;
    }
    node.backward(gout, slots);
  }
  return g;
}

Tensor Gradients::operator[](const Tensor& x) const {
  if (!x.on_tape() || x.tape() != tape_) return Tensor::zeros(x.shape());
  const Array& a = grads_.at(static_cast<std::size_t>(x.node()));
  if (a.size() == 0) return Tensor::zeros(x.shape());
  return Tensor(x.shape(), a);
}

bool Gradients::touched(const Tensor& x) const {
  return x.on_tape() && x.tape() == tape_ && grads_.at(static_cast<std::size_t>(x.node())).size() != 0;
}

}  // namespace sparsebody::ad
