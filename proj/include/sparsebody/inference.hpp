#pragma once

#include "sparsebody/dataset.hpp"
#include "sparsebody/networks.hpp"
#include "sparsebody/training.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sparsebody {

/// Per-frame pose and shape in the world frame of the input landmarks:
/// posed vertices are full_forward(pose_shape(f)).vertices + translation(f).
struct Prediction {
  std::vector<std::string> sequence;
  std::vector<long long> frame;
  RowMatrixXd quaternions;  // n x 4m, unit
  RowMatrixXd betas;        // n x 10
  RowMatrixXd translation;  // n x 3
  RowMatrixXd joints_in;    // n x 3m, attention joints

  Index size() const { return quaternions.rows(); }
  Index joint_count() const { return quaternions.cols() / 4; }
  PoseShape pose_shape(Index f) const;
  Points3 vertices(const BodyModel& model, Index f) const;
  Points3 joints_out(const BodyModel& model, Index f) const;
  Points3 attention_joints(Index f) const;
  Prediction subset(const std::vector<Index>& rows) const;
};

/// Runs the whole cascade in eval mode and maps every frame back through its
/// preprocessing transform.
Prediction predict(const NetworkParams& params, const Dataset& data, const BodyModel& model, Preprocessing mode,
                   Index batch_size = 256);

/// Frame table "sequence,frame,<joint>_qw..qz per joint,beta0..beta9,tx,ty,tz,
/// <joint>_jx..jz per joint" with lossless number formatting.
std::string format_predictions(const Prediction& p);
Prediction parse_predictions(const std::string& text);
void save_predictions(const Prediction& p, const std::filesystem::path& path);
Prediction load_predictions(const std::filesystem::path& path);

/// Replaces every frame's betas by the mean of its sequence and, with
/// `jitter`, applies the midpoint rule: a quaternion component that differs
/// from the midpoint of its neighbours by more than `threshold` while the
/// neighbours differ by less than `threshold` is set to that midpoint.
/// Decisions use the unsmoothed neighbours. Quaternions are renormalized.
std::vector<PoseShape> temporal_smooth(const std::vector<PoseShape>& frames, double threshold = 0.1,
                                       bool jitter = true);

/// temporal_smooth per sequence. Translations are adjusted so the root joint
/// stays where it was when the betas change.
Prediction smooth_predictions(const Prediction& p, const BodyModel& model, double threshold = 0.1,
                              bool jitter = true);

}  // namespace sparsebody
