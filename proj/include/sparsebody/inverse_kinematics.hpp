#pragma once

#include "sparsebody/body_model.hpp"
#include "sparsebody/skinning.hpp"

namespace sparsebody {

/// Intermediate quantities of joint unposing.
struct UnposeWorkspace {
  Points3 offsets;                       // J_r: posed child-minus-parent offsets (root row unused)
  Rotations<double> inverse_path;        // G_r: R_j^T * ... * R_root^T
  Rotations<double> unpose_rotations;    // G': rotation block of each inverse world transform
  Points3 translations;                  // O: translation block of each inverse world transform
  Points3 rest_joints;                   // J_t
};

/// Walks the tree root to leaf, rotating each posed offset back into the rest
/// frame and attaching it to the already unposed parent. The root keeps its
/// posed position.
UnposeWorkspace unpose_workspace(const Rotations<double>& rotations, const Points3& posed_joints,
                                 const std::vector<int>& parents);
Points3 unpose_joints(const Rotations<double>& rotations, const Points3& posed_joints, const std::vector<int>& parents);

/// Applies the weight-blended inverse transforms to posed points (k x 3) with
/// weights (k x m). Throws ContractViolation when a weight row does not sum to
/// one within 1e-4.
Points3 unpose_points_linear(const Rotations<double>& rotations, const Points3& points, const RowMatrixXd& weights,
                             const Points3& posed_joints, const Points3& rest_joints, const std::vector<int>& parents);

/// Rest-pose reference positions for the landmark correction: the template's
/// median landmark vertices, moved so the template root sits on rest_joints' root.
Points3 reference_landmarks(const BodyModel& model, const Points3& rest_joints);

/// Linear unposing plus the offset that linear unposing introduces on the
/// reference body: unpose(L) + ref - unpose(forward(ref)).
Points3 unpose_landmarks_corrected(const Rotations<double>& rotations, const Points3& landmarks,
                                   const BodyModel& model, const Points3& posed_joints, const Points3& rest_joints);

// Batched differentiable versions ([B, ...] tensors).

struct TapeUnpose {
  ad::Tensor rest_joints;  // [B, m, 3]
  ad::Tensor inverse;      // [B, m, 12]: row-major 3x4 blocks [G' | O]
};

TapeUnpose tape_unpose_joints(const ad::Tensor& rotations, const ad::Tensor& posed_joints, const std::vector<int>& parents);

ad::Tensor tape_unpose_points_linear(const TapeUnpose& unpose, const ad::Tensor& weights, const ad::Tensor& points);

/// Constant pieces of the landmark correction for one model.
struct CorrectionTensors {
  ad::Tensor reference;   // [l, 3] template median landmarks relative to the template root
  ad::Tensor ones;        // [l, 1]
  ad::Tensor weights;     // [l, m]

  explicit CorrectionTensors(const BodyModel& model);
};

ad::Tensor tape_unpose_landmarks_corrected(const ad::Tensor& rotations, const ad::Tensor& landmarks,
                                           const TapeUnpose& unpose, const CorrectionTensors& correction,
                                           const std::vector<int>& parents);

}  // namespace sparsebody
