#pragma once

#include "sparsebody/archive.hpp"
#include "sparsebody/autodiff/primitives.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sparsebody {

using Index = Eigen::Index;

/// Fully connected layer y = x W + b with W stored [in, out].
struct Dense {
  ad::Tensor weight;
  ad::Tensor bias;
};

/// A stack of dense layers with ReLU (and dropout while training) between
/// them and a linear output.
struct Block {
  std::string name;
  std::vector<Dense> layers;
  bool trainable = true;

  Index input_size() const { return layers.front().weight.dim(0); }
  Index output_size() const { return layers.back().weight.dim(1); }
};

struct NetworkShape {
  Index landmarks = 67;
  Index joints = 24;
  std::vector<Index> dae_hidden = {256, 128, 256};
  std::vector<Index> atn_hidden = {256, 256};
  std::vector<Index> psi_hidden = {512, 512, 512};
};

struct NetworkParams {
  NetworkShape shape;
  Block dae;
  Block atn;
  std::vector<Block> psi;
  /// Number of training stages finished (base = 1, then one per cascade).
  Index completed_stages = 0;

  std::vector<Block*> blocks();
  std::vector<const Block*> blocks() const;
  /// Every parameter tensor by name ("<block>/<layer>/weight|bias").
  std::map<std::string, ad::Tensor*> named_parameters();
};

/// Xavier-uniform weights. The first regressor's quaternion biases start at
/// (1, 0, 0, 0) and its output weights are scaled down so a fresh network
/// predicts a near-rest pose; later regressors start with a zero output layer
/// so they begin as the identity on the previous prediction.
NetworkParams init_network(const NetworkShape& shape, Index cascades, std::uint64_t seed);

/// Appends a zero-initialized cascade regressor.
void add_cascade(NetworkParams& params, std::uint64_t seed);

/// Dropout configuration for one forward pass. Eval mode disables dropout.
struct DropoutContext {
  bool train = false;
  double keep = 0.8;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

/// x [B, in] -> [B, out]. `stream` keys the dropout masks.
ad::Tensor block_forward(const Block& block, const ad::Tensor& x, const DropoutContext& dropout, std::uint64_t stream);

/// Centered landmarks (missing entries zero) and their mask, both [B, l, 3]
/// -> reconstruction [B, l, 3]. The mask is part of the input so that a zero
/// coordinate and a missing one are told apart. The skip connection passes
/// valid entries through and the block output fills the missing ones.
ad::Tensor dae_forward(const Block& dae, const ad::Tensor& landmarks, const ad::Tensor& mask,
                       const DropoutContext& dropout);

/// M * L + (1 - M) * L_dae.
ad::Tensor merge_reconstruction(const ad::Tensor& landmarks, const ad::Tensor& mask, const ad::Tensor& reconstruction);

struct AttentionOutput {
  ad::Tensor logits;   // A [B, m, l]
  ad::Tensor weights;  // softmax over landmarks [B, m, l]
  ad::Tensor joints;   // J_in [B, m, 3]
};
AttentionOutput atn_forward(const Block& atn, const ad::Tensor& landmarks, Index joints, const DropoutContext& dropout);

/// Subtracts row 0 of `joints` [B, m, 3] from every row of `points` [B, k, 3].
ad::Tensor subtract_root(const ad::Tensor& points, const ad::Tensor& joints);

struct PoseShapeTensors {
  ad::Tensor quaternions;  // raw [B, m, 4]
  ad::Tensor betas;        // [B, 10]
  ad::Tensor flat;         // [B, 4m + 10]
};

/// Regresses pose and shape from root-centered joints and landmarks; with a
/// previous prediction the block sees it as extra input and adds its output to it.
PoseShapeTensors psi_forward(const Block& psi, const ad::Tensor& joints, const ad::Tensor& landmarks,
                             const PoseShapeTensors* previous, Index joint_count, const DropoutContext& dropout,
                             std::uint64_t stream);

/// Every stage of one forward pass.
struct PipelineOutput {
  ad::Tensor reconstruction;  // L_dae
  ad::Tensor landmarks;       // L̂ (DAE-merged), same frame as the input
  AttentionOutput attention;  // joints in the input frame
  ad::Tensor centered_joints;     // J_in - J_in root
  ad::Tensor centered_landmarks;  // L̂ - J_in root
  std::vector<PoseShapeTensors> stages;
};

/// Runs DAE, ATN and regressors 0..last_stage on preprocessed landmarks.
/// Frozen blocks run with dropout disabled.
PipelineOutput pipeline_forward(const NetworkParams& params, const ad::Tensor& landmarks, const ad::Tensor& mask,
                                Index last_stage, const DropoutContext& dropout);

/// Checkpoint: every parameter plus a key=value manifest ("manifest" text entry)
/// with layer sizes, landmark/joint counts, freeze flags and caller-provided
/// extra keys (training step, preprocessing mode, ...).
Archive checkpoint_archive(const NetworkParams& params, const std::map<std::string, std::string>& extra = {});
NetworkParams network_from_archive(const Archive& archive);
std::map<std::string, std::string> manifest_of(const Archive& archive);

/// Throws NumericError naming the first non-finite parameter.
void check_finite(const NetworkParams& params);

}  // namespace sparsebody
