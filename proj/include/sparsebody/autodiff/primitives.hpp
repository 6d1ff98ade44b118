#pragma once

#include "sparsebody/autodiff/tensor.hpp"

#include <optional>
#include <string_view>
#include <vector>

namespace sparsebody::ad {

std::string_view primitive_name(Primitive op);
std::optional<Primitive> parse_primitive(std::string_view name);

/// Static (non-differentiable) arguments of a primitive.
struct Attributes {
  Index axis = -1;
  std::vector<Index> axes;
  double constant = 0.0;
  std::vector<Index> indices;
  std::vector<std::vector<Index>> index_sets;
  Shape shape;
};

/// Name-based dispatch onto the free functions below. Throws
/// ConfigurationError for an unknown name and DimensionError when the inputs
/// break the primitive's shape rule.
Tensor apply_primitive(Primitive op, std::span<const Tensor> inputs, const Attributes& attrs = {});
Tensor apply_primitive(std::string_view op, std::span<const Tensor> inputs, const Attributes& attrs = {});

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// x[..., S] + bias[S]: bias broadcast over the leading axes of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);

/// Matrix product. Supported ranks:
///   [n,k] x [k,r]     -> [n,r]
///   [n,k] x [B,k,r]   -> [B,n,r]   (shared left matrix)
///   [B,n,k] x [k,r]   -> [B,n,r]   (shared right matrix)
Tensor matmul(const Tensor& a, const Tensor& b);

/// Batched composition a[..., n, k] x b[..., k, r] with equal leading axes;
/// the 4x4 rigid-transform chain is the main client.
Tensor compose(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, Index axis = -1);
Tensor relu(const Tensor& x);
/// |x|; derivative at 0 is taken as 0.
Tensor abs(const Tensor& x);
/// max(x, c); derivative at x == c is taken as 0.
Tensor max_constant(const Tensor& x, double c);
/// For each index set (flat indices into x) the minimum value; the gradient is
/// routed to the lowest index among tied minima.
Tensor min_over_sets(const Tensor& x, const std::vector<std::vector<Index>>& sets);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, const std::vector<Index>& axes);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, const std::vector<Index>& axes);

/// Selects (possibly repeated) slices along `axis`.
Tensor gather(const Tensor& x, Index axis, const std::vector<Index>& indices);
Tensor concatenate(std::span<const Tensor> parts, Index axis);
Tensor concatenate(std::initializer_list<Tensor> parts, Index axis);

/// x * mask, where the caller supplies the (already 1/keep scaled) mask.
Tensor dropout(const Tensor& x, const Tensor& mask);

/// Normalizes the trailing 4-vectors. Throws DegenerateRotationError for
/// norms at or below 1e-8.
Tensor quat_normalize(const Tensor& q);
/// Unit quaternions [..., 4] in (w, x, y, z) order to rotations [..., 3, 3].
Tensor quat_to_rotation(const Tensor& q);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose_last2(const Tensor& x);

}  // namespace sparsebody::ad
