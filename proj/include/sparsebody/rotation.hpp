#pragma once

#include "sparsebody/errors.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <string>

namespace sparsebody {

/// Quaternion stored as (w, x, y, z).
template <typename Scalar>
using Quat = Eigen::Matrix<Scalar, 4, 1>;

template <typename Scalar>
Quat<Scalar> identity_quat() {
  return Quat<Scalar>(Scalar(1), Scalar(0), Scalar(0), Scalar(0));
}

/// Normalizes q and converts it to a rotation matrix. Norms at or below 1e-8
/// raise DegenerateRotationError.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> quat_to_rotmat(const Quat<Scalar>& q) {
  using std::sqrt;
  const Scalar n = q.norm();
  if (!(n > Scalar(1e-8))) throw DegenerateRotationError("quaternion norm " + std::to_string(double(n)));
  const Quat<Scalar> u = q / n;
  const Scalar w = u[0], x = u[1], y = u[2], z = u[3];
  Eigen::Matrix<Scalar, 3, 3> r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),  //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

/// Unit quaternion with w >= 0 for a rotation matrix.
template <typename Scalar>
Quat<Scalar> rotmat_to_quat(const Eigen::Matrix<Scalar, 3, 3>& r) {
  Eigen::Quaternion<Scalar> q(r);
  q.normalize();
  Quat<Scalar> out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < Scalar(0)) out = -out;
  return out;
}

/// Hamilton product a * b (apply b first, then a).
template <typename Scalar>
Quat<Scalar> quat_multiply(const Quat<Scalar>& a, const Quat<Scalar>& b) {
  return Quat<Scalar>(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                      a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                      a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                      a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

/// Rotation Rx(ax) * Ry(ay) * Rz(az) as a quaternion with w >= 0.
template <typename Scalar>
Quat<Scalar> euler_xyz_to_quat(Scalar ax, Scalar ay, Scalar az) {
  using std::cos;
  using std::sin;
  const Quat<Scalar> qx(cos(ax / 2), sin(ax / 2), Scalar(0), Scalar(0));
  const Quat<Scalar> qy(cos(ay / 2), Scalar(0), sin(ay / 2), Scalar(0));
  const Quat<Scalar> qz(cos(az / 2), Scalar(0), Scalar(0), sin(az / 2));
  Quat<Scalar> q = quat_multiply(quat_multiply(qx, qy), qz);
  if (q[0] < Scalar(0)) q = -q;
  return q;
}

}  // namespace sparsebody
