#pragma once

#include "sparsebody/archive.hpp"
#include "sparsebody/landmark_dictionary.hpp"
#include "sparsebody/rotation.hpp"

#include <Eigen/Core>
#include <Eigen/StdVector>

#include <filesystem>
#include <vector>

namespace sparsebody {

inline constexpr Index kShapeCount = 10;

template <typename Scalar>
using PointsT = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points3 = PointsT<double>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using QuatArray = Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>;
using ShapeVector = Eigen::Matrix<double, kShapeCount, 1>;

template <typename Scalar>
using Rotations = std::vector<Eigen::Matrix<Scalar, 3, 3>, Eigen::aligned_allocator<Eigen::Matrix<Scalar, 3, 3>>>;
template <typename Scalar>
using Transforms = std::vector<Eigen::Matrix<Scalar, 4, 4>, Eigen::aligned_allocator<Eigen::Matrix<Scalar, 4, 4>>>;

/// Linear-blend-skinning body. Joint 0 is the root; parents[0] == -1 and every
/// other parent index is smaller than its child.
struct BodyModel {
  Points3 template_vertices;     // p x 3, rest pose, meters
  RowMatrixXd shape_blendshapes; // 3p x 10, row 3*v + c
  RowMatrixXd joint_regressor;   // m x p
  RowMatrixXd skinning_weights;  // p x m
  std::vector<int> parents;      // m
  Faces faces;
  LandmarkDictionary landmarks;

  Index vertex_count() const { return template_vertices.rows(); }
  Index joint_count() const { return static_cast<Index>(parents.size()); }
  Index landmark_count() const { return landmarks.size(); }
};

/// Throws ModelValidationError when array extents disagree, skinning rows are
/// not convex weights, parents do not form a tree, or a patch is invalid.
void validate(const BodyModel& model);

BodyModel load_body_model(const std::filesystem::path& path);
void save_body_model(const BodyModel& model, const std::filesystem::path& path);
Archive to_archive(const BodyModel& model);
BodyModel from_archive(const Archive& archive);

/// Per-joint quaternions (w, x, y, z) and shape coefficients.
struct PoseShape {
  QuatArray quaternions;
  ShapeVector betas = ShapeVector::Zero();

  static PoseShape identity(Index joints);
  /// Scales every quaternion to unit norm.
  void normalize();
};

/// Output of full_forward. `transforms` are the per-joint world transforms G.
struct PosedBody {
  Points3 vertices;
  Points3 joints;
  Points3 rest_vertices;
  Points3 rest_joints;
  Transforms<double> transforms;
};

Rotations<double> quat_to_rotmat(const QuatArray& quaternions);

/// Shaped rest vertices T_t = T* + S beta and joints J_t = J_reg T_t.
std::pair<Points3, Points3> shape_body(const Eigen::Ref<const Eigen::VectorXd>& betas, const BodyModel& model);

/// World transform of each joint: G_child = G_parent * [R_child | J_child - J_parent],
/// G_root = [R_root | J_root].
template <typename Scalar>
Transforms<Scalar> world_transforms(const Rotations<Scalar>& rotations, const PointsT<Scalar>& rest_joints,
                                    const std::vector<int>& parents) {
  Transforms<Scalar> g(parents.size());
  for (std::size_t j = 0; j < parents.size(); ++j) {
    Eigen::Matrix<Scalar, 4, 4> local = Eigen::Matrix<Scalar, 4, 4>::Identity();
    local.template topLeftCorner<3, 3>() = rotations[j];
    const int p = parents[j];
    if (p < 0) {
      local.template topRightCorner<3, 1>() = rest_joints.row(static_cast<Index>(j)).transpose();
      g[j] = local;
    } else {
      local.template topRightCorner<3, 1>() =
          (rest_joints.row(static_cast<Index>(j)) - rest_joints.row(p)).transpose();
      g[j] = g[static_cast<std::size_t>(p)] * local;
    }
  }
  return g;
}

/// Poses rest points with per-point blend weights (k x m): each point is moved by
/// the weighted sum of G_j * [I | -J_j].
template <typename Scalar>
PointsT<Scalar> skin_points(const Transforms<Scalar>& world, const PointsT<Scalar>& rest_joints,
                            const PointsT<Scalar>& points,
                            const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>&
                                weights) {
  const Index m = static_cast<Index>(world.size());
  std::vector<Eigen::Matrix<Scalar, 3, 4>> skinning(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) {
    const auto& g = world[static_cast<std::size_t>(j)];
    auto& a = skinning[static_cast<std::size_t>(j)];
    a.template leftCols<3>() = g.template topLeftCorner<3, 3>();
    a.col(3) = g.template topRightCorner<3, 1>() - g.template topLeftCorner<3, 3>() * rest_joints.row(j).transpose();
  }
  PointsT<Scalar> out(points.rows(), 3);
  for (Index v = 0; v < points.rows(); ++v) {
    Eigen::Matrix<Scalar, 3, 4> blended = Eigen::Matrix<Scalar, 3, 4>::Zero();
    for (Index j = 0; j < m; ++j) {
      const Scalar w = weights(v, j);
      if (w != Scalar(0)) blended += w * skinning[static_cast<std::size_t>(j)];
    }
    out.row(v) = (blended.template leftCols<3>() * points.row(v).transpose() + blended.col(3)).transpose();
  }
  return out;
}

/// Posed positions of `points` under `rotations` about `rest_joints`.
Points3 forward_kinematics(const Rotations<double>& rotations, const Points3& rest_joints,
                           const std::vector<int>& parents, const Points3& points, const RowMatrixXd& weights);

/// Posed joints (each joint carried rigidly by its parent's transform).
Points3 posed_joints(const Transforms<double>& world);

PosedBody full_forward(const PoseShape& pose_shape, const BodyModel& model);

/// Area-weighted per-vertex normals. Throws ModelValidationError when a vertex
/// used by faces only touches degenerate triangles.
Points3 vertex_normals(const Points3& vertices, const Faces& faces);

/// Copy of the model with the template pushed `offset` meters along its
/// vertex normals.
BodyModel inflate_template(const BodyModel& model, double offset);

/// Skinning-weight rows of each landmark's median vertex (l x m).
RowMatrixXd landmark_weights(const BodyModel& model);
/// Template positions of each landmark's median vertex (l x 3).
Points3 median_template_points(const BodyModel& model);

}  // namespace sparsebody
