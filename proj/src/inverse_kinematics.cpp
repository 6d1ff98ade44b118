#include "sparsebody/inverse_kinematics.hpp"

#include "sparsebody/errors.hpp"

#include <cmath>
#include <string>

namespace sparsebody {

using ad::Tensor;

UnposeWorkspace unpose_workspace(const Rotations<double>& rotations, const Points3& posed_joints,
                                 const std::vector<int>& parents) {
  const auto m = parents.size();
  if (rotations.size() != m || posed_joints.rows() != static_cast<Index>(m)) {
    throw DimensionError("unpose_joints: rotations and joints must have one entry per joint");
  }
  UnposeWorkspace ws;
  ws.offsets = Points3::Zero(static_cast<Index>(m), 3);
  ws.rest_joints.resize(static_cast<Index>(m), 3);
  ws.translations.resize(static_cast<Index>(m), 3);
  ws.inverse_path.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto row = static_cast<Index>(j);
    const int p = parents[j];
    if (p < 0) {
      ws.inverse_path[j] = rotations[j].transpose();
      ws.rest_joints.row(row) = posed_joints.row(row);
      continue;
    }
    ws.inverse_path[j] = rotations[j].transpose() * ws.inverse_path[static_cast<std::size_t>(p)];
    ws.offsets.row(row) = posed_joints.row(row) - posed_joints.row(p);
    ws.rest_joints.row(row) =
        ws.rest_joints.row(p) + (ws.inverse_path[static_cast<std::size_t>(p)] * ws.offsets.row(row).transpose()).transpose();
  }
  ws.unpose_rotations = ws.inverse_path;
  for (std::size_t j = 0; j < m; ++j) {
    const auto row = static_cast<Index>(j);
    ws.translations.row(row) = ws.rest_joints.row(row) - (ws.unpose_rotations[j] * posed_joints.row(row).transpose()).transpose();
  }
  return ws;
}

Points3 unpose_joints(const Rotations<double>& rotations, const Points3& posed_joints, const std::vector<int>& parents) {
  return unpose_workspace(rotations, posed_joints, parents).rest_joints;
}

Points3 unpose_points_linear(const Rotations<double>& rotations, const Points3& points, const RowMatrixXd& weights,
                             const Points3& posed_joints, const Points3& rest_joints, const std::vector<int>& parents) {
  const Index m = static_cast<Index>(parents.size());
  if (weights.rows() != points.rows() || weights.cols() != m) {
    throw DimensionError("unpose_points_linear: weights must be points x joints");
  }
  if (rest_joints.rows() != m) throw DimensionError("unpose_points_linear: rest joints must have one row per joint");
  for (Index k = 0; k < weights.rows(); ++k) {
    if (std::abs(weights.row(k).sum() - 1.0) > 1e-4) {
      throw ContractViolation("unpose_points_linear: weights of point " + std::to_string(k) + " sum to " +
                              std::to_string(weights.row(k).sum()));
    }
  }
  UnposeWorkspace ws = unpose_workspace(rotations, posed_joints, parents);
  std::vector<Eigen::Matrix<double, 3, 4>> inverse(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) {
    auto& a = inverse[static_cast<std::size_t>(j)];
    a.leftCols<3>() = ws.unpose_rotations[static_cast<std::size_t>(j)];
    a.col(3) = rest_joints.row(j).transpose() - a.leftCols<3>() * posed_joints.row(j).transpose();
  }
  Points3 out(points.rows(), 3);
  for (Index k = 0; k < points.rows(); ++k) {
    Eigen::Matrix<double, 3, 4> blended = Eigen::Matrix<double, 3, 4>::Zero();
    for (Index j = 0; j < m; ++j) {
      if (weights(k, j) != 0.0) blended += weights(k, j) * inverse[static_cast<std::size_t>(j)];
    }
    out.row(k) = (blended.leftCols<3>() * points.row(k).transpose() + blended.col(3)).transpose();
  }
  return out;
}

Points3 reference_landmarks(const BodyModel& model, const Points3& rest_joints) {
  const Eigen::RowVector3d template_root = model.joint_regressor.row(0) * model.template_vertices;
  return median_template_points(model).rowwise() + (rest_joints.row(0) - template_root);
}

Points3 unpose_landmarks_corrected(const Rotations<double>& rotations, const Points3& landmarks,
                                   const BodyModel& model, const Points3& posed_joints, const Points3& rest_joints) {
  if (landmarks.rows() != model.landmark_count()) {
    throw DimensionError("unpose_landmarks_corrected: expected " + std::to_string(model.landmark_count()) + " landmarks");
  }
  const RowMatrixXd weights = landmark_weights(model);
  const Points3 reference = reference_landmarks(model, rest_joints);
  const Points3 posed_reference = forward_kinematics(rotations, rest_joints, model.parents, reference, weights);
  const Points3 linear = unpose_points_linear(rotations, landmarks, weights, posed_joints, rest_joints, model.parents);
  const Points3 round_trip =
      unpose_points_linear(rotations, posed_reference, weights, posed_joints, rest_joints, model.parents);
  return linear + reference - round_trip;
}

TapeUnpose tape_unpose_joints(const Tensor& rotations, const Tensor& posed_joints, const std::vector<int>& parents) {
  const Index batch = rotations.dim(0);
  const auto m = parents.size();
  if (rotations.dim(1) != static_cast<Index>(m) || posed_joints.dim(1) != static_cast<Index>(m)) {
    throw DimensionError("unpose_joints: rotations and joints must have one entry per joint");
  }
  std::vector<Tensor> inverse(m), posed(m), rest(m), blocks(m);
  for (std::size_t j = 0; j < m; ++j) {
    const Tensor rt = ad::transpose_last2(take(rotations, static_cast<Index>(j)));
    posed[j] = ad::reshape(take(posed_joints, static_cast<Index>(j)), {batch, 3, 1});
    const int p = parents[j];
    if (p < 0) {
      inverse[j] = rt;
      rest[j] = posed[j];
    } else {
      const auto pu = static_cast<std::size_t>(p);
      inverse[j] = ad::compose(rt, inverse[pu]);
      rest[j] = ad::add(rest[pu], ad::compose(inverse[pu], ad::sub(posed[j], posed[pu])));
    }
    const Tensor offset = ad::sub(rest[j], ad::compose(inverse[j], posed[j]));
    blocks[j] = ad::reshape(ad::concatenate({inverse[j], offset}, 2), {batch, 1, 12});
  }
  TapeUnpose out;
  out.rest_joints = ad::reshape(ad::concatenate(std::span<const Tensor>(rest), 1), {batch, static_cast<Index>(m), 3});
  out.inverse = ad::concatenate(std::span<const Tensor>(blocks), 1);
  return out;
}

Tensor tape_unpose_points_linear(const TapeUnpose& unpose, const Tensor& weights, const Tensor& points) {
  return tape_skin(unpose.inverse, weights, points);
}

CorrectionTensors::CorrectionTensors(const BodyModel& model)
    : ones(Tensor::full({model.landmark_count(), 1}, 1.0)), weights(Tensor::from_matrix(landmark_weights(model))) {
  const Eigen::RowVector3d template_root = model.joint_regressor.row(0) * model.template_vertices;
  reference = Tensor::from_matrix(median_template_points(model).rowwise() - template_root);
}

Tensor tape_unpose_landmarks_corrected(const Tensor& rotations, const Tensor& landmarks, const TapeUnpose& unpose,
                                       const CorrectionTensors& correction, const std::vector<int>& parents) {
  const Tensor root = ad::gather(unpose.rest_joints, 1, {0});
  const Tensor reference = ad::add_bias(ad::matmul(correction.ones, root), correction.reference);
  const TapeChain chain = tape_chain(rotations, unpose.rest_joints, parents);
  const Tensor posed_reference = tape_skin(chain.skinning, correction.weights, reference);
  const Tensor linear = tape_unpose_points_linear(unpose, correction.weights, landmarks);
  const Tensor round_trip = tape_unpose_points_linear(unpose, correction.weights, posed_reference);
  return ad::sub(ad::add(linear, reference), round_trip);
}

}  // namespace sparsebody
