#pragma once

// Test-only reference computations. Nothing here calls into the code paths
// they are used to check.

#include "sparsebody/autodiff/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <random>

namespace oracle {

using sparsebody::ad::Array;
using sparsebody::ad::Shape;
using sparsebody::ad::Tensor;

/// Central differences of a scalar function evaluated on plain arrays.
inline Array central_difference(const std::function<double(const Array&)>& f, const Array& x, double h = 1e-5) {
  Array g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Array p = x, m = x;
    p[i] += h;
    m[i] -= h;
    g[i] = (f(p) - f(m)) / (2 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(||a||_inf, ||b||_inf)
inline double relative_error(const Array& a, const Array& b) {
  const double s = std::max(a.abs().maxCoeff(), b.abs().maxCoeff());
  return s == 0.0 ? 0.0 : (a - b).abs().maxCoeff() / s;
}

inline Array uniform(std::mt19937_64& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Array a(n);
  for (auto& v : a) v = d(rng);
  return a;
}

/// Uniform samples bounded away from zero (|v| >= margin).
inline Array nonzero_uniform(std::mt19937_64& rng, Eigen::Index n, double margin = 0.05) {
  Array a = uniform(rng, n);
  for (auto& v : a) {
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
  return a;
}

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const auto n = sparsebody::ad::shape_size(shape);
  return Tensor(std::move(shape), uniform(rng, n, lo, hi));
}

/// Rodrigues' formula, independent of the quaternion code under test.
inline Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle) {
  const Eigen::Vector3d k = axis.normalized();
  Eigen::Matrix3d kx;
  kx << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return Eigen::Matrix3d::Identity() + std::sin(angle) * kx + (1 - std::cos(angle)) * kx * kx;
}

/// Distance from p to triangle abc (closest-point region test).
inline double point_triangle_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                                      const Eigen::Vector3d& c) {
  const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return (p - a).norm();
  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return (p - b).norm();
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return (p - (a + d1 / (d1 - d3) * ab)).norm();
  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return (p - c).norm();
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return (p - (a + d2 / (d2 - d6) * ac)).norm();
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    return (p - (b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b))).norm();
  }
  const double denom = 1.0 / (va + vb + vc);
  return (p - (a + ab * (vb * denom) + ac * (vc * denom))).norm();
}

}  // namespace oracle
