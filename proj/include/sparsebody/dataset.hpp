#pragma once

#include "sparsebody/archive.hpp"
#include "sparsebody/body_model.hpp"
#include "sparsebody/toy_model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace sparsebody {

/// Landmark frames in dictionary column order. Row f of `coordinates` holds
/// x,y,z of each landmark (meters); `mask` is 1 for valid and 0 for missing,
/// and missing coordinates are stored as 0.
struct Dataset {
  std::vector<std::string> codes;
  RowMatrixXd coordinates;  // n x 3l
  RowMatrixXd mask;         // n x l
  std::vector<std::string> sequence;
  std::vector<long long> frame;
  std::vector<std::string> subject;  // empty when the source has no subject column
  std::vector<std::string> warnings;

  Index size() const { return coordinates.rows(); }
  Index landmark_count() const { return static_cast<Index>(codes.size()); }
  Points3 landmarks(Index f) const;
  /// Frame indices grouped by sequence id, in order of first appearance.
  std::vector<std::pair<std::string, std::vector<Index>>> sequences() const;
  /// Rows `rows` of this dataset, in the given order.
  Dataset subset(const std::vector<Index>& rows) const;
  /// Throws DataError when extents disagree or missing entries are not zeroed.
  void validate() const;
};

/// Frame table: header "sequence,frame[,subject],CODE_x,CODE_y,CODE_z,...";
/// one row per frame; "NA" marks a missing coordinate.
void save_frame_table(const Dataset& data, const std::filesystem::path& path);
/// Columns are matched to `dictionary` codes. Unknown codes raise DataError
/// listing them; dictionary codes without columns become missing; NaN or NA
/// coordinates mark the landmark missing and add a warning.
Dataset load_frame_table(const std::filesystem::path& path, const LandmarkDictionary& dictionary);
Dataset parse_frame_table(const std::string& text, const LandmarkDictionary& dictionary);
std::string format_frame_table(const Dataset& data);

/// Mean number of missing landmarks per frame for each sequence.
std::map<std::string, double> missing_statistics(const Dataset& data);

LandmarkDictionary load_dictionary(const std::filesystem::path& path);
void save_dictionary(const LandmarkDictionary& dictionary, const std::filesystem::path& path);

/// Generator-side truth for each frame; kept apart from Dataset so nothing in
/// training can read it.
struct GroundTruth {
  RowMatrixXd quaternions;     // n x 4m, unit, w >= 0
  RowMatrixXd betas;           // n x 10
  RowMatrixXd translation;     // n x 3, added after full_forward
  RowMatrixXd joints;          // n x 3m posed joints (translated)
  RowMatrixXd rest_landmarks;  // n x 3l landmarks on the shaped rest body
  RowMatrixXd offsets;         // n x l normal offsets (meters)

  Index size() const { return quaternions.rows(); }
  PoseShape pose_shape(Index f) const;
  /// Posed (translated) mesh vertices of frame f, recomputed from the model.
  Points3 vertices(const BodyModel& model, Index f) const;
  Points3 joint_positions(Index f) const;
  GroundTruth subset(const std::vector<Index>& rows) const;

  Archive to_archive() const;
  static GroundTruth from_archive(const Archive& a);
  void save(const std::filesystem::path& path) const { to_archive().save(path); }
  static GroundTruth load(const std::filesystem::path& path) { return from_archive(Archive::load(path)); }
};

struct SynthConfig {
  Index frames = 2048;
  std::uint64_t seed = 7;
  /// Frames per sequence; shape and marker placement are fixed per sequence
  /// and poses interpolate between random keyframes.
  Index sequence_length = 16;
  Index keyframe_interval = 8;
  double beta_range = 2.0;
  double offset_min = 0.008;
  double offset_max = 0.010;
  /// Per-landmark probability of being reported missing.
  double drop_rate = 0.0;
  /// Extra rotation about the vertical axis, uniform in [-yaw_range, yaw_range].
  double yaw_range = 0.0;
  /// Root translation, uniform in [-range, range] on x and z.
  double translation_range = 0.5;
  /// Use only each patch's median vertex (no random surface point).
  bool median_only = false;
  std::vector<EulerBox> pose_limits = toy_pose_limits();
};

struct SynthOutput {
  Dataset data;
  GroundTruth truth;
};

/// Each landmark is a uniformly random point (by area) on its patch's faces,
/// pushed along that face's normal by a distance in [offset_min, offset_max].
/// Patches without complete faces fall back to their vertices and vertex
/// normals. Deterministic in `config.seed`.
SynthOutput synth_generate(const BodyModel& model, const SynthConfig& config);

/// Uniform Euler-box pose sample as quaternions (m x 4).
QuatArray sample_pose(const std::vector<EulerBox>& limits, std::mt19937_64& rng);

}  // namespace sparsebody
