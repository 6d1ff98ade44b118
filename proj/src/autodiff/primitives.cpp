#include "sparsebody/autodiff/primitives.hpp"

#include "sparsebody/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>

namespace sparsebody::ad {
namespace {

using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

struct NamedPrimitive {
  Primitive op;
  std::string_view name;
};

constexpr std::array kNames{
    NamedPrimitive{Primitive::kVariable, "variable"},
    NamedPrimitive{Primitive::kAdd, "add"},
    NamedPrimitive{Primitive::kSubtract, "subtract"},
    NamedPrimitive{Primitive::kMultiply, "multiply"},
    NamedPrimitive{Primitive::kAddBias, "add_bias"},
    NamedPrimitive{Primitive::kScale, "scale"},
    NamedPrimitive{Primitive::kMatMul, "matmul"},
    NamedPrimitive{Primitive::kSoftmax, "softmax"},
    NamedPrimitive{Primitive::kRelu, "relu"},
    NamedPrimitive{Primitive::kAbs, "abs"},
    NamedPrimitive{Primitive::kMaxConstant, "max_constant"},
    NamedPrimitive{Primitive::kMinOverSets, "min_over_sets"},
    NamedPrimitive{Primitive::kSum, "sum"},
    NamedPrimitive{Primitive::kMean, "mean"},
    NamedPrimitive{Primitive::kGather, "gather"},
    NamedPrimitive{Primitive::kConcatenate, "concatenate"},
    NamedPrimitive{Primitive::kDropout, "dropout"},
    NamedPrimitive{Primitive::kCompose, "compose"},
    NamedPrimitive{Primitive::kQuatNormalize, "quat_normalize"},
    NamedPrimitive{Primitive::kQuatToRotation, "quat_to_rotation"},
    NamedPrimitive{Primitive::kReshape, "reshape"},
    NamedPrimitive{Primitive::kTransposeLast2, "transpose_last2"},
};

[[noreturn]] void shape_error(Primitive op, const std::string& detail) {
  throw DimensionError(std::string(primitive_name(op)) + ": " + detail);
}

void require_same_shape(Primitive op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_error(op, "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

Index normalize_axis(Primitive op, Index axis, Index rank) {
  const Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) shape_error(op, "axis " + std::to_string(axis) + " out of range");
  return a;
}

// Splits a shape into (outer, extent, inner) around `axis`.
struct AxisSplit {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index i = 0; i < static_cast<Index>(shape.size()); ++i) {
    if (i < axis) s.outer *= shape[static_cast<std::size_t>(i)];
    else if (i == axis) s.extent = shape[static_cast<std::size_t>(i)];
    else s.inner *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

Tensor make(Primitive op, std::initializer_list<Tensor> inputs, Shape shape, Array value, BackwardFn backward) {
  const std::vector<Tensor> in(inputs);
  return Tape::record(op, in, Tensor(std::move(shape), std::move(value)), std::move(backward));
}

// Small batched products (e.g. 3x4 times 4x1) are faster as plain loops.
void small_product(const double* a, const double* b, double* y, Index n, Index k, Index r) {
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < r; ++j) {
      double acc = 0.0;
      for (Index t = 0; t < k; ++t) acc += a[i * k + t] * b[t * r + j];
      y[i * r + j] = acc;
    }
  }
}

}  // namespace

std::string_view primitive_name(Primitive op) {
  for (const auto& entry : kNames) {
    if (entry.op == op) return entry.name;
  }
  return "unknown";
}

std::optional<Primitive> parse_primitive(std::string_view name) {
  for (const auto& entry : kNames) {
    if (entry.name == name) return entry.op;
  }
  return std::nullopt;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(Primitive::kAdd, a, b);
  return make(Primitive::kAdd, {a, b}, a.shape(), a.data() + b.data(), [](const Array& g, std::span<Array* const> gi) {
    if (gi[0]) *gi[0] += g;
    if (gi[1]) *gi[1] += g;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(Primitive::kSubtract, a, b);
  return make(Primitive::kSubtract, {a, b}, a.shape(), a.data() - b.data(),
              [](const Array& g, std::span<Array* const> gi) {
                if (gi[0]) *gi[0] += g;
                if (gi[1]) *gi[1] -= g;
              });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(Primitive::kMultiply, a, b);
  const Tensor av = a.detach();
  const Tensor bv = b.detach();
  return make(Primitive::kMultiply, {a, b}, a.shape(), a.data() * b.data(),
              [av, bv](const Array& g, std::span<Array* const> gi) {
                if (gi[0]) *gi[0] += g * bv.data();
                if (gi[1]) *gi[1] += g * av.data();
              });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const Index br = bias.rank();
  if (br > x.rank() || !std::equal(bias.shape().begin(), bias.shape().end(), x.shape().end() - br)) {
    shape_error(Primitive::kAddBias,
                "bias " + shape_string(bias.shape()) + " is not a trailing block of " + shape_string(x.shape()));
  }
  const Index s = bias.size();
  const Index n = x.size() / s;
  Array y(x.size());
  MutMap(y.data(), n, s) = x.as_matrix(n, s).rowwise() + bias.as_matrix(1, s).row(0);
  return make(Primitive::kAddBias, {x, bias}, x.shape(), std::move(y),
              [n, s](const Array& g, std::span<Array* const> gi) {
                if (gi[0]) *gi[0] += g;
                if (gi[1]) {
                  Array acc = Array::Zero(s);
                  for (Index r = 0; r < n; ++r) acc += g.segment(r * s, s);
                  *gi[1] += acc;
                }
              });
}

Tensor scale(const Tensor& x, double factor) {
  return make(Primitive::kScale, {x}, x.shape(), x.data() * factor,
              [factor](const Array& g, std::span<Array* const> gi) {
                if (gi[0]) *gi[0] += g * factor;
              });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  constexpr Primitive op = Primitive::kMatMul;
  const auto mismatch = [&] {
    shape_error(op, "cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  };
  const Tensor av = a.detach();
  const Tensor bv = b.detach();

  if (a.rank() == 2 && b.rank() == 2) {
    const Index n = a.dim(0), k = a.dim(1), r = b.dim(1);
    if (b.dim(0) != k) mismatch();
    Array y(n * r);
    MutMap(y.data(), n, r).noalias() = a.as_matrix(n, k) * b.as_matrix(k, r);
    return make(op, {a, b}, {n, r}, std::move(y), [av, bv, n, k, r](const Array& g, std::span<Array* const> gi) {
      const ConstMap G(g.data(), n, r);
      if (gi[0]) MutMap(gi[0]->data(), n, k).noalias() += G * bv.as_matrix(k, r).transpose();
      if (gi[1]) MutMap(gi[1]->data(), k, r).noalias() += av.as_matrix(n, k).transpose() * G;
    });
  }
  if (a.rank() == 2 && b.rank() == 3) {
    const Index n = a.dim(0), k = a.dim(1), batch = b.dim(0), r = b.dim(2);
    if (b.dim(1) != k) mismatch();
    Array y(batch * n * r);
    const auto A = a.as_matrix(n, k);
    for (Index i = 0; i < batch; ++i) {
      MutMap(y.data() + i * n * r, n, r).noalias() = A * ConstMap(b.data().data() + i * k * r, k, r);
    }
    return make(op, {a, b}, {batch, n, r}, std::move(y),
                [av, bv, n, k, r, batch](const Array& g, std::span<Array* const> gi) {
                  const auto A = av.as_matrix(n, k);
                  for (Index i = 0; i < batch; ++i) {
                    const ConstMap G(g.data() + i * n * r, n, r);
                    if (gi[0]) {
                      MutMap(gi[0]->data(), n, k).noalias() +=
                          G * ConstMap(bv.data().data() + i * k * r, k, r).transpose();
                    }
                    if (gi[1]) MutMap(gi[1]->data() + i * k * r, k, r).noalias() += A.transpose() * G;
                  }
                });
  }
  if (a.rank() == 3 && b.rank() == 2) {
    const Index batch = a.dim(0), n = a.dim(1), k = a.dim(2), r = b.dim(1);
    if (b.dim(0) != k) mismatch();
    const Index rows = batch * n;
    Array y(rows * r);
    MutMap(y.data(), rows, r).noalias() = a.as_matrix(rows, k) * b.as_matrix(k, r);
    return make(op, {a, b}, {batch, n, r}, std::move(y),
                [av, bv, rows, k, r](const Array& g, std::span<Array* const> gi) {
                  const ConstMap G(g.data(), rows, r);
                  if (gi[0]) MutMap(gi[0]->data(), rows, k).noalias() += G * bv.as_matrix(k, r).transpose();
                  if (gi[1]) MutMap(gi[1]->data(), k, r).noalias() += av.as_matrix(rows, k).transpose() * G;
                });
  }
  mismatch();
  return {};
}

Tensor compose(const Tensor& a, const Tensor& b) {
  constexpr Primitive op = Primitive::kCompose;
  if (a.rank() < 3 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()) || a.dim(-1) != b.dim(-2)) {
    shape_error(op, "cannot compose " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
  }
  const Index n = a.dim(-2), k = a.dim(-1), r = b.dim(-1);
  const Index batch = a.size() / (n * k);
  Shape shape(a.shape().begin(), a.shape().end() - 2);
  shape.push_back(n);
  shape.push_back(r);

  const bool small = n * k * r <= 64;
  Array y(batch * n * r);
  for (Index i = 0; i < batch; ++i) {
    const double* pa = a.data().data() + i * n * k;
    const double* pb = b.data().data() + i * k * r;
    double* py = y.data() + i * n * r;
    if (small) {
      small_product(pa, pb, py, n, k, r);
    } else {
      MutMap(py, n, r).noalias() = ConstMap(pa, n, k) * ConstMap(pb, k, r);
    }
  }
  const Tensor av = a.detach();
  const Tensor bv = b.detach();
  return make(op, {a, b}, std::move(shape), std::move(y),
              [av, bv, n, k, r, batch](const Array& g, std::span<Array* const> gi) {
                for (Index i = 0; i < batch; ++i) {
                  const double* pa = av.data().data() + i * n * k;
                  const double* pb = bv.data().data() + i * k * r;
                  const double* pg = g.data() + i * n * r;
                  if (gi[0]) {
                    double* da = gi[0]->data() + i * n * k;
                    for (Index p = 0; p < n; ++p)
                      for (Index t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (Index j = 0; j < r; ++j) acc += pg[p * r + j] * pb[t * r + j];
                        da[p * k + t] += acc;
                      }
                  }
                  if (gi[1]) {
                    double* db = gi[1]->data() + i * k * r;
                    for (Index t = 0; t < k; ++t)
                      for (Index j = 0; j < r; ++j) {
                        double acc = 0.0;
                        for (Index p = 0; p < n; ++p) acc += pa[p * k + t] * pg[p * r + j];
                        db[t * r + j] += acc;
                      }
                  }
                }
              });
}

Tensor softmax(const Tensor& x, Index axis) {
  constexpr Primitive op = Primitive::kSoftmax;
  if (x.rank() == 0) shape_error(op, "needs at least one axis");
  const AxisSplit s = split_at(x.shape(), normalize_axis(op, axis, x.rank()));
  Array y(x.size());
  const double* px = x.data().data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index in = 0; in < s.inner; ++in) {
      const Index base = o * s.extent * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (Index j = 0; j < s.extent; ++j) mx = std::max(mx, px[base + j * s.inner]);
      double total = 0.0;
      for (Index j = 0; j < s.extent; ++j) {
        const double e = std::exp(px[base + j * s.inner] - mx);
        y[base + j * s.inner] = e;
        total += e;
      }
      for (Index j = 0; j < s.extent; ++j) y[base + j * s.inner] /= total;
    }
  }
  Tensor yv(x.shape(), y);
  return make(op, {x}, x.shape(), std::move(y), [yv, s](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    const Array& yd = yv.data();
    for (Index o = 0; o < s.outer; ++o) {
      for (Index in = 0; in < s.inner; ++in) {
        const Index base = o * s.extent * s.inner + in;
        double dot = 0.0;
        for (Index j = 0; j < s.extent; ++j) dot += g[base + j * s.inner] * yd[base + j * s.inner];
        for (Index j = 0; j < s.extent; ++j) {
          const Index idx = base + j * s.inner;
          (*gi[0])[idx] += yd[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  const Tensor xv = x.detach();
  if ((x.data() == 0.0).any()) note_nondifferentiable(x, Primitive::kRelu);
  return make(Primitive::kRelu, {x}, x.shape(), x.data().max(0.0), [xv](const Array& g, std::span<Array* const> gi) {
    if (gi[0]) *gi[0] += (xv.data() > 0.0).select(g, 0.0);
  });
}

Tensor abs(const Tensor& x) {
  const Tensor xv = x.detach();
  if ((x.data() == 0.0).any()) note_nondifferentiable(x, Primitive::kAbs);
  return make(Primitive::kAbs, {x}, x.shape(), x.data().abs(), [xv](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    const Array& v = xv.data();
    *gi[0] += (v > 0.0).select(g, (v < 0.0).select(-g, 0.0));
  });
}

Tensor max_constant(const Tensor& x, double c) {
  const Tensor xv = x.detach();
  if ((x.data() == c).any()) note_nondifferentiable(x, Primitive::kMaxConstant);
  return make(Primitive::kMaxConstant, {x}, x.shape(), x.data().max(c),
              [xv, c](const Array& g, std::span<Array* const> gi) {
                if (gi[0]) *gi[0] += (xv.data() > c).select(g, 0.0);
              });
}

Tensor min_over_sets(const Tensor& x, const std::vector<std::vector<Index>>& sets) {
  constexpr Primitive op = Primitive::kMinOverSets;
  if (sets.empty()) shape_error(op, "no index sets");
  std::vector<Index> winners(sets.size());
  Array y(static_cast<Index>(sets.size()));
  bool tie = false;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (sets[s].empty()) shape_error(op, "index set " + std::to_string(s) + " is empty");
    Index best = -1;
    for (Index idx : sets[s]) {
      if (idx < 0 || idx >= x.size()) shape_error(op, "index " + std::to_string(idx) + " out of range");
      if (best < 0 || x[idx] < x[best] || (x[idx] == x[best] && idx < best)) best = idx;
    }
    for (Index idx : sets[s]) tie = tie || (idx != best && x[idx] == x[best]);
    winners[s] = best;
    y[static_cast<Index>(s)] = x[best];
  }
  if (tie) note_nondifferentiable(x, op);
  return make(op, {x}, {static_cast<Index>(sets.size())}, std::move(y),
              [winners](const Array& g, std::span<Array* const> gi) {
                if (!gi[0]) return;
                for (std::size_t s = 0; s < winners.size(); ++s) (*gi[0])[winners[s]] += g[static_cast<Index>(s)];
              });
}

Tensor sum(const Tensor& x) {
  return make(Primitive::kSum, {x}, {}, Array::Constant(1, x.data().sum()),
              [](const Array& g, std::span<Array* const> gi) {
                if (gi[0]) *gi[0] += g[0];
              });
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  return make(Primitive::kMean, {x}, {}, Array::Constant(1, x.data().sum() * inv),
              [inv](const Array& g, std::span<Array* const> gi) {
                if (gi[0]) *gi[0] += g[0] * inv;
              });
}

namespace {

// Maps every flat index of x onto the flat index of the reduced output.
struct Reduction {
  Shape out_shape;
  std::vector<Index> target;
  Index count = 1;
};

Reduction plan_reduction(Primitive op, const Shape& shape, const std::vector<Index>& axes) {
  const Index rank = static_cast<Index>(shape.size());
  std::vector<bool> reduced(shape.size(), false);
  for (Index a : axes) reduced[static_cast<std::size_t>(normalize_axis(op, a, rank))] = true;

  Reduction r;
  std::vector<Index> out_stride(shape.size(), 0);
  Index stride = 1;
  for (Index i = rank - 1; i >= 0; --i) {
    const auto u = static_cast<std::size_t>(i);
    if (reduced[u]) {
      r.count *= shape[u];
    } else {
      out_stride[u] = stride;
      stride *= shape[u];
    }
  }
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (!reduced[i]) r.out_shape.push_back(shape[i]);

  const Index n = shape_size(shape);
  r.target.resize(static_cast<std::size_t>(n));
  std::vector<Index> coord(shape.size(), 0);
  Index out = 0;
  for (Index flat = 0; flat < n; ++flat) {
    r.target[static_cast<std::size_t>(flat)] = out;
    for (Index d = rank - 1; d >= 0; --d) {
      const auto u = static_cast<std::size_t>(d);
      ++coord[u];
      out += out_stride[u];
      if (coord[u] < shape[u]) break;
      out -= out_stride[u] * coord[u];
      coord[u] = 0;
    }
  }
  return r;
}

Tensor reduce(Primitive op, const Tensor& x, const std::vector<Index>& axes, double factor) {
  auto plan = std::make_shared<Reduction>(plan_reduction(op, x.shape(), axes));
  Array y = Array::Zero(shape_size(plan->out_shape));
  for (Index i = 0; i < x.size(); ++i) y[plan->target[static_cast<std::size_t>(i)]] += x[i];
  y *= factor;
  return make(op, {x}, plan->out_shape, std::move(y), [plan, factor](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    for (Index i = 0; i < gi[0]->size(); ++i) (*gi[0])[i] += factor * g[plan->target[static_cast<std::size_t>(i)]];
  });
}

}  // namespace

Tensor sum(const Tensor& x, const std::vector<Index>& axes) { return reduce(Primitive::kSum, x, axes, 1.0); }

Tensor mean(const Tensor& x, const std::vector<Index>& axes) {
  const Reduction probe = plan_reduction(Primitive::kMean, x.shape(), axes);
  return reduce(Primitive::kMean, x, axes, 1.0 / static_cast<double>(probe.count));
}

Tensor gather(const Tensor& x, Index axis, const std::vector<Index>& indices) {
  constexpr Primitive op = Primitive::kGather;
  if (x.rank() == 0) shape_error(op, "cannot gather from a scalar");
  if (indices.empty()) shape_error(op, "empty index list");
  const Index ax = normalize_axis(op, axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  for (Index idx : indices) {
    if (idx < 0 || idx >= s.extent) {
      shape_error(op, "index " + std::to_string(idx) + " out of range for axis extent " + std::to_string(s.extent));
    }
  }
  const Index k = static_cast<Index>(indices.size());
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(ax)] = k;
  Array y(s.outer * k * s.inner);
  const double* px = x.data().data();
  for (Index o = 0; o < s.outer; ++o)
    for (Index j = 0; j < k; ++j)
      std::copy_n(px + (o * s.extent + indices[static_cast<std::size_t>(j)]) * s.inner, s.inner,
                  y.data() + (o * k + j) * s.inner);
  return make(op, {x}, std::move(shape), std::move(y), [indices, s, k](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    for (Index o = 0; o < s.outer; ++o)
      for (Index j = 0; j < k; ++j) {
        double* dst = gi[0]->data() + (o * s.extent + indices[static_cast<std::size_t>(j)]) * s.inner;
        const double* src = g.data() + (o * k + j) * s.inner;
        for (Index t = 0; t < s.inner; ++t) dst[t] += src[t];
      }
  });
}

Tensor concatenate(std::span<const Tensor> parts, Index axis) {
  constexpr Primitive op = Primitive::kConcatenate;
  if (parts.empty()) shape_error(op, "nothing to concatenate");
  const Index rank = parts[0].rank();
  const Index ax = normalize_axis(op, axis, rank);
  Shape shape = parts[0].shape();
  Index total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) shape_error(op, "rank mismatch");
    for (Index d = 0; d < rank; ++d) {
      if (d != ax && p.dim(d) != shape[static_cast<std::size_t>(d)]) {
        shape_error(op, "shape mismatch " + shape_string(p.shape()) + " vs " + shape_string(parts[0].shape()));
      }
    }
    total += p.dim(ax);
  }
  shape[static_cast<std::size_t>(ax)] = total;
  const AxisSplit s = split_at(shape, ax);

  std::vector<Index> widths;
  widths.reserve(parts.size());
  Array y(shape_size(shape));
  Index offset = 0;
  for (const Tensor& p : parts) {
    const Index w = p.dim(ax) * s.inner;
    widths.push_back(w);
    for (Index o = 0; o < s.outer; ++o)
      std::copy_n(p.data().data() + o * w, w, y.data() + o * total * s.inner + offset);
    offset += w;
  }
  const Index row = total * s.inner;
  return Tape::record(op, parts, Tensor(std::move(shape), std::move(y)),
                      [widths, s, row](const Array& g, std::span<Array* const> gi) {
                        Index off = 0;
                        for (std::size_t k = 0; k < widths.size(); ++k) {
                          const Index w = widths[k];
                          if (gi[k]) {
                            for (Index o = 0; o < s.outer; ++o) {
                              double* dst = gi[k]->data() + o * w;
                              const double* src = g.data() + o * row + off;
                              for (Index t = 0; t < w; ++t) dst[t] += src[t];
                            }
                          }
                          off += w;
                        }
                      });
}

Tensor concatenate(std::initializer_list<Tensor> parts, Index axis) {
  const std::vector<Tensor> v(parts);
  return concatenate(std::span<const Tensor>(v), axis);
}

Tensor dropout(const Tensor& x, const Tensor& mask) {
  require_same_shape(Primitive::kDropout, x, mask);
  const Tensor mv = mask.detach();
  return make(Primitive::kDropout, {x}, x.shape(), x.data() * mask.data(),
              [mv](const Array& g, std::span<Array* const> gi) {
                if (gi[0]) *gi[0] += g * mv.data();
              });
}

Tensor quat_normalize(const Tensor& q) {
  constexpr Primitive op = Primitive::kQuatNormalize;
  if (q.rank() == 0 || q.dim(-1) != 4) shape_error(op, "expects [..., 4], got " + shape_string(q.shape()));
  const Index n = q.size() / 4;
  Array y(q.size());
  Array norms(n);
  for (Index i = 0; i < n; ++i) {
    const double nrm = q.data().segment(4 * i, 4).matrix().norm();
    if (!(nrm > 1e-8)) {
      throw DegenerateRotationError("quaternion " + std::to_string(i) + " has norm " + std::to_string(nrm));
    }
    norms[i] = nrm;
    y.segment(4 * i, 4) = q.data().segment(4 * i, 4) / nrm;
  }
  Tensor yv(q.shape(), y);
  return make(op, {q}, q.shape(), std::move(y), [yv, norms, n](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    for (Index i = 0; i < n; ++i) {
      const auto u = yv.data().segment(4 * i, 4);
      const auto gs = g.segment(4 * i, 4);
      const double dot = (u * gs).sum();
      gi[0]->segment(4 * i, 4) += (gs - u * dot) / norms[i];
    }
  });
}

Tensor quat_to_rotation(const Tensor& q) {
  constexpr Primitive op = Primitive::kQuatToRotation;
  if (q.rank() == 0 || q.dim(-1) != 4) shape_error(op, "expects [..., 4], got " + shape_string(q.shape()));
  const Index n = q.size() / 4;
  Shape shape(q.shape().begin(), q.shape().end() - 1);
  shape.push_back(3);
  shape.push_back(3);
  Array y(n * 9);
  for (Index i = 0; i < n; ++i) {
    const double w = q[4 * i], x = q[4 * i + 1], yy = q[4 * i + 2], z = q[4 * i + 3];
    double* r = y.data() + 9 * i;
    r[0] = 1 - 2 * (yy * yy + z * z);
    r[1] = 2 * (x * yy - w * z);
    r[2] = 2 * (x * z + w * yy);
    r[3] = 2 * (x * yy + w * z);
    r[4] = 1 - 2 * (x * x + z * z);
    r[5] = 2 * (yy * z - w * x);
    r[6] = 2 * (x * z - w * yy);
    r[7] = 2 * (yy * z + w * x);
    r[8] = 1 - 2 * (x * x + yy * yy);
  }
  const Tensor qv = q.detach();
  return make(op, {q}, std::move(shape), std::move(y), [qv, n](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    for (Index i = 0; i < n; ++i) {
      const double w = qv[4 * i], x = qv[4 * i + 1], y = qv[4 * i + 2], z = qv[4 * i + 3];
      const double* gr = g.data() + 9 * i;
      // Rows: d r_k / d(w, x, y, z).
      const double jac[9][4] = {
          {0, 0, -4 * y, -4 * z},     {-2 * z, 2 * y, 2 * x, -2 * w}, {2 * y, 2 * z, 2 * w, 2 * x},
          {2 * z, 2 * y, 2 * x, 2 * w}, {0, -4 * x, 0, -4 * z},       {-2 * x, -2 * w, 2 * z, 2 * y},
          {-2 * y, 2 * z, -2 * w, 2 * x}, {2 * x, 2 * w, 2 * z, 2 * y}, {0, -4 * x, -4 * y, 0},
      };
      for (int c = 0; c < 4; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 9; ++k) acc += gr[k] * jac[k][c];
        (*gi[0])[4 * i + c] += acc;
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    shape_error(Primitive::kReshape, "cannot reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  return make(Primitive::kReshape, {x}, std::move(shape), x.data(), [](const Array& g, std::span<Array* const> gi) {
    if (gi[0]) *gi[0] += g;
  });
}

Tensor transpose_last2(const Tensor& x) {
  constexpr Primitive op = Primitive::kTransposeLast2;
  if (x.rank() < 2) shape_error(op, "needs rank >= 2, got " + shape_string(x.shape()));
  const Index r = x.dim(-2), c = x.dim(-1);
  const Index batch = x.size() / (r * c);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Array y(x.size());
  for (Index b = 0; b < batch; ++b)
    MutMap(y.data() + b * r * c, c, r) = ConstMap(x.data().data() + b * r * c, r, c).transpose();
  return make(op, {x}, std::move(shape), std::move(y), [r, c, batch](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    for (Index b = 0; b < batch; ++b)
      MutMap(gi[0]->data() + b * r * c, r, c) += ConstMap(g.data() + b * r * c, c, r).transpose();
  });
}

Tensor apply_primitive(Primitive op, std::span<const Tensor> in, const Attributes& attrs) {
  const auto arity = [&](std::size_t n) {
    if (in.size() != n) {
      throw DimensionError(std::string(primitive_name(op)) + ": expects " + std::to_string(n) + " inputs, got " +
                           std::to_string(in.size()));
    }
  };
  switch (op) {
    case Primitive::kAdd: arity(2); return add(in[0], in[1]);
    case Primitive::kSubtract: arity(2); return sub(in[0], in[1]);
    case Primitive::kMultiply: arity(2); return mul(in[0], in[1]);
    case Primitive::kAddBias: arity(2); return add_bias(in[0], in[1]);
    case Primitive::kScale: arity(1); return scale(in[0], attrs.constant);
    case Primitive::kMatMul: arity(2); return matmul(in[0], in[1]);
    case Primitive::kSoftmax: arity(1); return softmax(in[0], attrs.axis);
    case Primitive::kRelu: arity(1); return relu(in[0]);
    case Primitive::kAbs: arity(1); return abs(in[0]);
    case Primitive::kMaxConstant: arity(1); return max_constant(in[0], attrs.constant);
    case Primitive::kMinOverSets: arity(1); return min_over_sets(in[0], attrs.index_sets);
    case Primitive::kSum: arity(1); return attrs.axes.empty() ? sum(in[0]) : sum(in[0], attrs.axes);
    case Primitive::kMean: arity(1); return attrs.axes.empty() ? mean(in[0]) : mean(in[0], attrs.axes);
    case Primitive::kGather: arity(1); return gather(in[0], attrs.axis, attrs.indices);
    case Primitive::kConcatenate: return concatenate(in, attrs.axis);
    case Primitive::kDropout: arity(2); return dropout(in[0], in[1]);
    case Primitive::kCompose: arity(2); return compose(in[0], in[1]);
    case Primitive::kQuatNormalize: arity(1); return quat_normalize(in[0]);
    case Primitive::kQuatToRotation: arity(1); return quat_to_rotation(in[0]);
    case Primitive::kReshape: arity(1); return reshape(in[0], attrs.shape);
    case Primitive::kTransposeLast2: arity(1); return transpose_last2(in[0]);
    case Primitive::kVariable: break;
  }
  throw ConfigurationError("primitive '" + std::string(primitive_name(op)) + "' cannot be applied");
}

Tensor apply_primitive(std::string_view op, std::span<const Tensor> inputs, const Attributes& attrs) {
  const auto parsed = parse_primitive(op);
  if (!parsed) throw ConfigurationError("unknown primitive '" + std::string(op) + "'");
  return apply_primitive(*parsed, inputs, attrs);
}

}  // namespace sparsebody::ad
