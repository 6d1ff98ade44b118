#pragma once

#include "sparsebody/config.hpp"
#include "sparsebody/dataset.hpp"
#include "sparsebody/inverse_kinematics.hpp"
#include "sparsebody/losses.hpp"
#include "sparsebody/networks.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace sparsebody {

enum class Preprocessing { kTranslate, kTranslateProcrustes };

std::string to_string(Preprocessing p);
/// "translate" or "procrustes"; throws ConfigurationError otherwise.
Preprocessing parse_preprocessing(const std::string& s);

struct TrainConfig {
  double learning_rate = 1e-3;
  Index batch_size = 256;
  double keep = 0.8;
  /// Cap on the total number of steps over all stages.
  Index max_steps = 6000;
  Index stage_steps = 3000;
  Index cascades = 1;
  /// Fraction of valid landmarks dropped per frame and step.
  double missing_rate = 0.0;
  std::uint64_t seed = 1;
  Preprocessing preprocessing = Preprocessing::kTranslate;
  double validation_fraction = 0.1;
  Index validation_every = 250;
  /// At most this many validation frames are scored.
  Index validation_frames = 512;
  /// Template inflation (meters) used by the surface terms.
  double inflation = 0.01;
  LossWeights weights;
  SurfaceAssignment assignment = SurfaceAssignment::kNearestVertex;
  /// Use only the median vertex of every patch.
  bool hard_assignment = false;
  NetworkShape shape;
  /// Pose bounds; derived from the toy joint limits when absent.
  std::optional<QuaternionBounds> bounds;

  /// Reads keys "train.*", "net.*", "lambda.*" and "bounds.*"; unknown keys
  /// with other prefixes are rejected.
  static TrainConfig from_config(const KeyValues& kv);
  KeyValues to_config() const;
  void validate() const;
};

/// x' = rotation * x + translation.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Points3 apply(const Points3& points) const;
  Points3 invert(const Points3& points) const;
  /// (*this) after `first`.
  RigidTransform after(const RigidTransform& first) const;
};

/// Frames in network coordinates plus the transform that produced each one.
struct Preprocessed {
  RowMatrixXd coordinates;  // n x 3l, missing entries zero
  RowMatrixXd mask;         // n x l
  std::vector<RigidTransform> transforms;
};

/// Subtracts the mean of the valid landmarks of every frame. Throws DataError
/// naming the first frame without valid landmarks.
Preprocessed preprocess_translate(const RowMatrixXd& coordinates, const RowMatrixXd& mask);

/// Rotation (det +1) and translation, no scale, taking the valid `points`
/// onto the matching `reference` rows in the least-squares sense. Throws
/// AlignmentError with fewer than 3 valid points or a collinear set.
RigidTransform procrustes_fit(const Points3& points, const Eigen::VectorXd& valid, const Points3& reference);

/// Rigidly aligns every frame to `reference` (l x 3).
Preprocessed preprocess_procrustes(const RowMatrixXd& coordinates, const RowMatrixXd& mask, const Points3& reference);

/// The mode's full preprocessing: optional Procrustes alignment, then centering.
Preprocessed preprocess(const Dataset& data, Preprocessing mode, const Points3& reference);

/// Template median-vertex landmarks, centered on their mean.
Points3 procrustes_reference(const BodyModel& model);

/// Drops floor(tau * valid) randomly chosen valid landmarks of every row.
void augment_missing(RowMatrixXd& coordinates, RowMatrixXd& mask, double tau, std::mt19937_64& rng);

/// Network input tensors for the given rows: landmarks [B, l, 3] and the
/// per-coordinate mask [B, l, 3].
struct FrameBatch {
  ad::Tensor landmarks;
  ad::Tensor mask;
};
FrameBatch make_batch(const RowMatrixXd& coordinates, const RowMatrixXd& mask);

struct OptimizerState {
  std::map<std::string, ad::Array> first_moment;
  std::map<std::string, ad::Array> second_moment;
  long long step = 0;
};

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of x in place; `step` is 1-based.
void adam_update(ad::Array& x, const ad::Array& grad, ad::Array& m, ad::Array& v, long long step, double lr,
                 const AdamSettings& s = {});

/// Updates every parameter of a trainable block that has a gradient entry.
/// Frozen blocks and their moments are left untouched. Throws NumericError
/// naming a parameter whose gradient is not finite.
void adam_step(NetworkParams& params, const std::map<std::string, ad::Array>& grads, OptimizerState& state,
               double lr, const AdamSettings& s = {});

/// Everything the losses need from the body model, prepared once per run.
struct LossContext {
  BodyModel model;  // inflated
  ModelTensors tensors;
  CorrectionTensors correction;
  std::vector<std::vector<Index>> patches;
  QuaternionBounds bounds;
  LossWeights weights;
  SurfaceAssignment assignment;

  LossContext(const BodyModel& body, const TrainConfig& config);
};

struct StepLosses {
  LossComponents components;
  ad::Tensor total;
  PipelineOutput pipeline;
};

/// Forward pass through networks, body model and losses for one batch.
/// `clean_mask` marks the entries that were valid before augmentation; it
/// selects the denoising targets.
StepLosses compute_losses(const NetworkParams& params, const FrameBatch& batch, const ad::Tensor& clean_mask,
                          const ad::Tensor& clean_landmarks, Index stage, const LossContext& context,
                          const DropoutContext& dropout);

/// Training and validation frame indices; whole sequences go to one side.
struct Split {
  std::vector<Index> train;
  std::vector<Index> validation;
};
Split split_frames(const Dataset& data, double validation_fraction, std::uint64_t seed);

struct MetricsRow {
  Index stage = 0;
  Index step = 0;
  /// Weighted components: dae, beta, phi, joints, surface, unpose.
  std::array<double, 6> weighted{};
  double total = 0.0;
  /// NaN on steps without validation.
  double validation_loss = std::numeric_limits<double>::quiet_NaN();
  std::map<std::string, double> monitor;
};

std::string metrics_header(const std::vector<std::string>& monitor_keys);
std::string metrics_line(const MetricsRow& row, const std::vector<std::string>& monitor_keys);

struct TrainingHooks {
  /// Extra validation metrics (for example ground-truth errors computed by the
  /// caller) for the current parameters and the validation rows.
  std::function<std::map<std::string, double>(const NetworkParams&, const std::vector<Index>&)> monitor;
  std::vector<std::string> monitor_keys;
  /// Receives every row as it is produced.
  std::function<void(const MetricsRow&)> on_row;
};

struct StageResult {
  NetworkParams params;  // best by validation loss
  Index best_step = 0;
  double best_validation_loss = 0.0;
  /// Mean training loss over the last 10% of steps.
  double final_training_loss = 0.0;
  std::vector<MetricsRow> log;
  Split split;
};

/// Stage 0 trains DAE, ATN and the first regressor with the first-stage loss;
/// stage i > 0 appends (if needed) and trains regressor i alone with the
/// second-stage loss, everything else frozen. Throws StagingError unless
/// `params` finished stage - 1.
StageResult train_stage(Index stage, NetworkParams params, const Dataset& data, const BodyModel& model,
                        const TrainConfig& config, const TrainingHooks& hooks = {});

/// Validation loss of `params` on the given (preprocessed) rows in eval mode.
double validation_loss(const NetworkParams& params, const Preprocessed& frames, const std::vector<Index>& rows,
                       Index stage, const LossContext& context, Index batch_size);

struct TrainingRun {
  NetworkParams params;
  std::vector<StageResult> stages;
};

/// Base stage followed by every cascade stage, each starting from the best
/// parameters of the previous one. `on_stage` sees each finished stage.
TrainingRun train(const Dataset& data, const BodyModel& model, const TrainConfig& config,
                  const TrainingHooks& hooks = {},
                  const std::function<void(Index, const StageResult&)>& on_stage = {});

/// Trains the denoising autoencoder alone on its own loss for
/// `config.stage_steps` steps, dropping `config.missing_rate` of the valid
/// landmarks of every frame at every step. Uses translate preprocessing; the
/// other blocks keep their initial values.
NetworkParams train_denoiser(const Dataset& data, const TrainConfig& config);

/// Mean distances (meters) between masked landmarks and their recovered positions.
struct RecoveryErrors {
  double denoiser = 0.0;
  /// Baseline: the landmark's mean over the reference frames, shifted by the
  /// mean residual of the frame's remaining landmarks.
  double column_mean = 0.0;
  Index masked = 0;
};

/// Drops `tau` of the valid landmarks of every test frame (seeded) and scores
/// both the autoencoder and the column-mean baseline on the dropped ones.
RecoveryErrors masked_recovery_errors(const NetworkParams& params, const Dataset& reference, const Dataset& test,
                                      double tau, std::uint64_t seed);

}  // namespace sparsebody
