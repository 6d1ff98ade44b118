#pragma once

#include "sparsebody/autodiff/primitives.hpp"
#include "sparsebody/body_model.hpp"
#include "sparsebody/config.hpp"
#include "sparsebody/inverse_kinematics.hpp"
#include "sparsebody/toy_model.hpp"

#include <cstdint>

namespace sparsebody {

// Every loss takes batched tensors ([B, ...]) and averages over the batch as
// well as over the entries named in its normalization.

/// Per-joint box on raw quaternion components.
struct QuaternionBounds {
  QuatArray lower;
  QuatArray upper;

  /// Throws ConfigurationError unless lower <= upper and (1,0,0,0) is inside
  /// every joint's box.
  void validate() const;

  /// Keys "bounds.<j>.lower" / "bounds.<j>.upper", each "w,x,y,z".
  static QuaternionBounds from_config(const KeyValues& kv, Index joints);
  void write_config(KeyValues& kv) const;
};

/// Componentwise min/max of quaternions (w >= 0) sampled uniformly from each
/// joint's Euler box plus its corners; the identity is always included.
QuaternionBounds bounds_from_euler(const std::vector<EulerBox>& limits, int samples_per_joint, std::uint64_t seed);

struct LossWeights {
  double dae = 1.0;
  double beta = 0.1;
  double phi = 1.0;
  double joints = 0.1;
  double surface = 10.0;
  double unpose = 2.0;

  /// Keys "lambda.dae", "lambda.beta", "lambda.phi", "lambda.joints",
  /// "lambda.surface", "lambda.unpose". Negative weights are rejected.
  static LossWeights from_config(const KeyValues& kv);
};

/// sum(M * |L - L_dae|) / (B * l * 3).
ad::Tensor loss_dae(const ad::Tensor& landmarks, const ad::Tensor& reconstruction, const ad::Tensor& mask);

/// mean(max(0, lower - phi) + max(0, phi - upper)) over B * m * 4.
ad::Tensor loss_phi(const ad::Tensor& quaternions, const QuaternionBounds& bounds);

/// mean(max(0, |beta| - 5) + |beta|) over B * 10.
ad::Tensor loss_beta(const ad::Tensor& betas);

/// mean|J_out - J_in| with J_in detached (it acts as a fixed target).
ad::Tensor loss_joints(const ad::Tensor& attention_joints, const ad::Tensor& output_joints);

enum class SurfaceAssignment {
  /// Nearest patch vertex by 3D distance, then per-coordinate |difference|.
  kNearestVertex,
  /// Independent minimum over the patch for each coordinate.
  kPerCoordinate,
};

/// Patch-restricted landmark-to-surface L1 distance, divided by B * l * 3.
/// `patches[i]` lists the vertices landmark i may attach to.
ad::Tensor loss_surface(const ad::Tensor& landmarks, const ad::Tensor& vertices,
                        const std::vector<std::vector<Index>>& patches,
                        SurfaceAssignment assignment = SurfaceAssignment::kNearestVertex);

/// Patch lists of a dictionary; hard assignment keeps only the medians.
std::vector<std::vector<Index>> patch_lists(const LandmarkDictionary& dictionary, bool hard = false);

/// Inverse-kinematic consistency: unposed J_in against the shaped rest joints
/// plus corrected-unposed landmarks against the shaped rest surface. All point
/// arguments are root-relative: joints/landmarks relative to J_in's root and
/// rest joints/vertices relative to the rest root.
struct UnposeTerms {
  ad::Tensor total;
  ad::Tensor joints;
  ad::Tensor landmarks;
};
UnposeTerms loss_unpose(const ad::Tensor& rotations, const ad::Tensor& attention_joints, const ad::Tensor& landmarks,
                        const ad::Tensor& rest_joints, const ad::Tensor& rest_vertices,
                        const CorrectionTensors& correction, const std::vector<int>& parents,
                        const std::vector<std::vector<Index>>& patches);

struct LossComponents {
  ad::Tensor dae, beta, phi, joints, surface, unpose;
};

enum class LossStage { kL1, kL2 };

/// Weighted sum; the second stage leaves out the DAE term. Throws NumericError
/// naming the first non-finite component.
ad::Tensor combined_loss(LossStage stage, const LossComponents& c, const LossWeights& w);

}  // namespace sparsebody
