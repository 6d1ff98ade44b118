#pragma once

#include "sparsebody/autodiff/primitives.hpp"
#include "sparsebody/body_model.hpp"

namespace sparsebody {

// Batched, differentiable counterparts of the body-model functions. Every
// tensor carries a leading batch axis B.

/// Constant tensors derived from a BodyModel, built once and reused per step.
struct ModelTensors {
  ad::Tensor template_flat;     // [3p]
  ad::Tensor blendshapes_t;     // [10, 3p]
  ad::Tensor joint_regressor;   // [m, p]
  ad::Tensor skinning_weights;  // [p, m]
  ad::Tensor landmark_weights;  // [l, m]
  std::vector<int> parents;
  Index vertices = 0;

  explicit ModelTensors(const BodyModel& model);
};

/// Raw quaternions [B, m, 4] to rotations [B, m, 3, 3] (normalized first).
ad::Tensor tape_rotations(const ad::Tensor& quaternions);

/// betas [B, 10] -> shaped rest vertices [B, p, 3].
ad::Tensor tape_shape_vertices(const ad::Tensor& betas, const ModelTensors& model);
/// Rest vertices [B, p, 3] -> rest joints [B, m, 3].
ad::Tensor tape_regress_joints(const ad::Tensor& rest_vertices, const ModelTensors& model);

struct TapeChain {
  ad::Tensor skinning;      // [B, m, 12]: row-major 3x4 blocks G_j * [I | -J_j]
  ad::Tensor joints;        // [B, m, 3] posed joints
  std::vector<ad::Tensor> world_rotations;  // m x [B, 3, 3]
};

/// World transforms down the kinematic tree.
TapeChain tape_chain(const ad::Tensor& rotations, const ad::Tensor& rest_joints, const std::vector<int>& parents);

/// Blends the chain's transforms with weights [k, m] and applies them to points [B, k, 3].
ad::Tensor tape_skin(const ad::Tensor& skinning, const ad::Tensor& weights, const ad::Tensor& points);

struct TapeBody {
  ad::Tensor vertices;       // [B, p, 3]
  ad::Tensor joints;         // [B, m, 3]
  ad::Tensor rest_vertices;  // [B, p, 3]
  ad::Tensor rest_joints;    // [B, m, 3]
  ad::Tensor rotations;      // [B, m, 3, 3]
  TapeChain chain;
};

TapeBody tape_forward(const ad::Tensor& quaternions, const ad::Tensor& betas, const ModelTensors& model);

/// Slice j of axis 1 with that axis dropped: [B, n, ...] -> [B, ...].
ad::Tensor take(const ad::Tensor& x, Index j);

}  // namespace sparsebody
