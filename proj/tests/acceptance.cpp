// Runs the twelve acceptance criteria and prints one PASS/FAIL line for each.
// Optional arguments select criteria by number; the default runs all of them.

#include "sparsebody/evaluation.hpp"
#include "sparsebody/gradient_suite.hpp"
#include "sparsebody/inference.hpp"
#include "sparsebody/inverse_kinematics.hpp"
#include "sparsebody/random.hpp"
#include "sparsebody/rotation.hpp"
#include "sparsebody/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <optional>
#include <set>
#include <string>

using namespace sparsebody;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

const BodyModel& toy() {
  static const BodyModel model = make_toy_model();
  return model;
}

// Independent pose per frame; shape and marker placement per 16-frame sequence.
SynthConfig toy_set(Index frames, std::uint64_t seed) {
  SynthConfig s;
  s.frames = frames;
  s.seed = seed;
  s.keyframe_interval = 1;
  return s;
}

const SynthOutput& train_set() {
  static const SynthOutput o = synth_generate(toy(), toy_set(2048, 7));
  return o;
}

const SynthOutput& test_set() {
  static const SynthOutput o = synth_generate(toy(), toy_set(256, 99));
  return o;
}

TrainConfig base_config() {
  TrainConfig c;
  c.batch_size = 64;
  c.stage_steps = 3000;
  c.max_steps = 3000;
  c.cascades = 0;
  c.keep = 1.0;
  return c;
}

double surface_error(const NetworkParams& p, const SynthOutput& test, Preprocessing mode) {
  return evaluate(predict(p, test.data, toy(), mode), test.truth, toy()).overall.surface;
}

// The trained base stage, shared by criteria 6, 7 and 8.
struct BaseRun {
  double untrained = 0.0;
  double trained = 0.0;
  double seconds = 0.0;
  StageResult stage;
};

const BaseRun& base_run() {
  static const BaseRun run = [] {
    BaseRun r;
    const TrainConfig c = base_config();
    NetworkShape shape = c.shape;
    shape.landmarks = toy().landmark_count();
    shape.joints = toy().joint_count();
    r.untrained = surface_error(init_network(shape, 0, c.seed), test_set(), c.preprocessing);
    const auto start = Clock::now();
    r.stage = train(train_set().data, toy(), c).stages.front();
    r.seconds = seconds_since(start);
    r.trained = surface_error(r.stage.params, test_set(), c.preprocessing);
    return r;
  }();
  return run;
}

Outcome gradient_suite() {
  const GradientSuiteResult r = run_gradient_suite(toy(), 20, 1, 1e-4);
  double worst = 0.0;
  std::string failures;
  for (const auto& c : r.checks) {
    worst = std::max(worst, c.worst_relative_error);
    if (c.failed > 0 || c.points < 20) failures += " " + c.name;
  }
  return {r.passed() && r.seconds < 60.0,
          fmt("%zu checks x 20 points, worst relative error %.2e, %.1f s%s", r.checks.size(), worst, r.seconds,
              failures.empty() ? "" : (" failing:" + failures).c_str())};
}

Outcome kinematic_round_trip() {
  const BodyModel& m = toy();
  auto rng = stream_rng(2, 0, 0);
  std::uniform_real_distribution<double> u(-2, 2);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    PoseShape ps;
    ps.quaternions = sample_pose(toy_pose_limits(), rng);
    for (Index k = 0; k < kShapeCount; ++k) ps.betas[k] = u(rng);
    const PosedBody body = full_forward(ps, m);
    const Points3 back = unpose_joints(quat_to_rotmat(ps.quaternions), body.joints, m.parents);
    worst = std::max(worst, (back - body.rest_joints).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-6, fmt("1000 poses, worst joint deviation %.2e m", worst)};
}

Outcome landmark_cancellation() {
  const BodyModel& m = toy();
  const RowMatrixXd w = landmark_weights(m);
  auto rng = stream_rng(3, 0, 0);
  std::uniform_real_distribution<double> u(-2, 2);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    PoseShape ps;
    ps.quaternions = sample_pose(toy_pose_limits(), rng);
    for (Index k = 0; k < kShapeCount; ++k) ps.betas[k] = u(rng);
    const PosedBody body = full_forward(ps, m);
    const Rotations<double> r = quat_to_rotmat(ps.quaternions);
    const Points3 reference = reference_landmarks(m, body.rest_joints);
    const Points3 posed = forward_kinematics(r, body.rest_joints, m.parents, reference, w);
    const Points3 back = unpose_landmarks_corrected(r, posed, m, body.joints, body.rest_joints);
    worst = std::max(worst, (back - reference).rowwise().norm().maxCoeff());
  }
  return {worst < 1e-9, fmt("200 poses, worst landmark error %.2e m", worst)};
}

Outcome corrected_unposing() {
  const BodyModel& m = toy();
  SynthConfig s;
  s.frames = 500;
  s.seed = 4;
  s.keyframe_interval = 1;
  const SynthOutput o = synth_generate(m, s);
  const RowMatrixXd w = landmark_weights(m);
  double linear = 0.0, corrected = 0.0;
  for (Index f = 0; f < o.truth.size(); ++f) {
    const PoseShape ps = o.truth.pose_shape(f);
    const Rotations<double> r = quat_to_rotmat(ps.quaternions);
    const Eigen::RowVector3d t = o.truth.translation.row(f);
    const Points3 rest_joints = shape_body(ps.betas, m).second;
    const Points3 joints = o.truth.joint_positions(f).rowwise() - t;
    const Points3 landmarks = o.data.landmarks(f).rowwise() - t;
    const Points3 truth = o.truth.rest_landmarks.row(f).reshaped<Eigen::RowMajor>(m.landmark_count(), 3);
    linear += point_set_error(unpose_points_linear(r, landmarks, w, joints, rest_joints, m.parents), truth);
    corrected += point_set_error(unpose_landmarks_corrected(r, landmarks, m, joints, rest_joints), truth);
  }
  linear /= 500.0, corrected /= 500.0;
  return {corrected < linear, fmt("mean unposing error corrected %.2f mm, linear %.2f mm", 1e3 * corrected, 1e3 * linear)};
}

Outcome rotation_validity() {
  auto rng = stream_rng(5, 0, 0);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> scale(-6, 2);
  double orth = 0.0, det = 0.0;
  for (int t = 0; t < 100000; ++t) {
    Quat<double> q(n(rng), n(rng), n(rng), n(rng));
    q *= std::pow(10.0, scale(rng)) / q.norm();
    const Eigen::Matrix3d r = quat_to_rotmat(q);
    orth = std::max(orth, (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff());
    det = std::max(det, std::abs(r.determinant() - 1.0));
  }
  // Raw regressor outputs through the differentiable conversion.
  const NetworkParams& p = base_run().stage.params;
  const Preprocessed pre = preprocess(test_set().data, Preprocessing::kTranslate, procrustes_reference(toy()));
  const FrameBatch b = make_batch(pre.coordinates, pre.mask);
  const PipelineOutput out = pipeline_forward(p, b.landmarks, b.mask, 0, DropoutContext{});
  const Index count = out.stages.back().quaternions.size() / 4;
  const ad::Tensor rotations = tape_rotations(out.stages.back().quaternions);
  const auto rm = rotations.as_matrix(count, 9);
  for (Index i = 0; i < count; ++i) {
    const Eigen::Matrix3d r = rm.row(i).reshaped<Eigen::RowMajor>(3, 3);
    orth = std::max(orth, (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff());
    det = std::max(det, std::abs(r.determinant() - 1.0));
  }
  return {orth < 1e-6 && det < 1e-6,
          fmt("100000 random quaternions + %lld regressor outputs, max |RtR-I| %.2e, max |det-1| %.2e",
              static_cast<long long>(count), orth, det)};
}

Outcome attention_geometry() {
  const NetworkParams& p = base_run().stage.params;
  const Preprocessed pre = preprocess(test_set().data, Preprocessing::kTranslate, procrustes_reference(toy()));
  const FrameBatch b = make_batch(pre.coordinates, pre.mask);
  const PipelineOutput out = pipeline_forward(p, b.landmarks, b.mask, 0, DropoutContext{});
  const Index n = test_set().data.size(), m = toy().joint_count(), l = toy().landmark_count();
  const auto w = out.attention.weights.as_matrix(n * m, l);
  const auto lm = out.landmarks.as_matrix(n * l, 3);
  const auto joints = out.attention.joints.as_matrix(n * m, 3);
  const double row_sum = (w.rowwise().sum().array() - 1.0).abs().maxCoeff();
  const double negative = std::max(0.0, -w.minCoeff());
  double combo = 0.0;
  for (Index f = 0; f < n; ++f) {
    const RowMatrixXd c = w.middleRows(f * m, m) * lm.middleRows(f * l, l);
    combo = std::max(combo, (c - joints.middleRows(f * m, m)).cwiseAbs().maxCoeff());
  }
  return {row_sum < 1e-9 && negative == 0.0 && combo < 1e-9,
          fmt("%lld frames, max |row sum - 1| %.2e, min weight %.2e, max |J_in - A L| %.2e", static_cast<long long>(n),
              row_sum, w.minCoeff(), combo)};
}

Outcome end_to_end() {
  const BaseRun& r = base_run();
  const double ratio = r.trained / r.untrained;
  return {ratio < 0.2 && r.seconds < 1800.0,
          fmt("held-out T_out %.2f mm vs untrained %.2f mm (%.1f%%), best step %lld, training %.0f s", 1e3 * r.trained,
              1e3 * r.untrained, 100.0 * ratio, static_cast<long long>(r.stage.best_step), r.seconds)};
}

Outcome cascade_benefit() {
  const BaseRun& base = base_run();
  TrainConfig c = base_config();
  c.cascades = 1;
  c.stage_steps = 1500;
  c.max_steps = 3000;
  const StageResult s = train_stage(1, base.stage.params, train_set().data, toy(), c);
  const double cascade = surface_error(s.params, test_set(), c.preprocessing);
  return {cascade <= base.trained,
          fmt("held-out T_out base %.2f mm, with second regressor %.2f mm (%lld cascade steps)", 1e3 * base.trained,
              1e3 * cascade, static_cast<long long>(c.stage_steps))};
}

Outcome procrustes_benefit() {
  SynthConfig s = toy_set(2048, 7);
  s.yaw_range = std::numbers::pi;
  const SynthOutput train_rot = synth_generate(toy(), s);
  s = toy_set(256, 99);
  s.yaw_range = std::numbers::pi;
  const SynthOutput test_rot = synth_generate(toy(), s);
  double err[2];
  for (int k = 0; k < 2; ++k) {
    TrainConfig c = base_config();
    c.stage_steps = c.max_steps = 1500;
    c.preprocessing = k == 0 ? Preprocessing::kTranslate : Preprocessing::kTranslateProcrustes;
    err[k] = surface_error(train(train_rot.data, toy(), c).stages.front().params, test_rot, c.preprocessing);
  }
  return {err[1] < err[0],
          fmt("random yaw in [-pi, pi], 1500 steps: T_out translate %.2f mm, translate+procrustes %.2f mm", 1e3 * err[0],
              1e3 * err[1])};
}

Outcome missing_landmarks() {
  const SynthOutput train_s = synth_generate(toy(), toy_set(2048, 7));
  const SynthOutput test_s = synth_generate(toy(), toy_set(256, 99));
  SynthConfig defaults;
  const double noise = 0.5 * (defaults.offset_min + defaults.offset_max);
  RecoveryErrors e[2];
  const double taus[2] = {0.1, 0.5};
  for (int k = 0; k < 2; ++k) {
    TrainConfig c = base_config();
    c.missing_rate = taus[k];
    const NetworkParams p = train_denoiser(train_s.data, c);
    e[k] = masked_recovery_errors(p, train_s.data, test_s.data, taus[k], 11);
  }
  const double growth = e[1].denoiser / e[0].denoiser;
  const bool pass = e[0].denoiser < 3 * noise && e[0].denoiser < e[0].column_mean && growth < 5;
  return {pass, fmt("tau 0.1: autoencoder %.2f mm (limit %.1f mm), column mean %.2f mm; tau 0.5: %.2f mm, ratio %.2f",
                    1e3 * e[0].denoiser, 3e3 * noise, 1e3 * e[0].column_mean, 1e3 * e[1].denoiser, growth)};
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
  const SynthOutput data = synth_generate(toy(), toy_set(256, 13));
  TrainConfig c;
  c.batch_size = 16;
  c.stage_steps = 25;
  c.max_steps = 50;
  c.cascades = 1;
  c.missing_rate = 0.1;
  c.validation_every = 10;
  const auto dir = std::filesystem::temp_directory_path();
  std::string bytes[2];
  bool frozen = true;
  for (int run = 0; run < 2; ++run) {
    const TrainingRun r = train(data.data, toy(), c);
    const auto path = dir / ("sparsebody_acceptance_" + std::to_string(run) + ".ckpt");
    checkpoint_archive(r.params).save(path);
    bytes[run] = file_bytes(path);
    std::filesystem::remove(path);
    const NetworkParams& before = r.stages[0].params;
    const NetworkParams& after = r.stages[1].params;
    const std::vector<const Block*> a = before.blocks(), b = after.blocks();
    for (std::size_t k = 0; k < a.size(); ++k) {
      for (std::size_t j = 0; j < a[k]->layers.size(); ++j) {
        frozen = frozen && (a[k]->layers[j].weight.data() == b[k]->layers[j].weight.data()).all() &&
                 (a[k]->layers[j].bias.data() == b[k]->layers[j].bias.data()).all();
      }
    }
  }
  const bool same = !bytes[0].empty() && bytes[0] == bytes[1];
  return {same && frozen, fmt("checkpoints %s (%zu bytes), frozen blocks %s", same ? "identical" : "differ",
                              bytes[0].size(), frozen ? "unchanged" : "changed")};
}

Outcome metric_sanity() {
  const Mesh sphere = make_icosphere(0.2, 3);
  std::mt19937_64 rng(12);
  const double self = scan_to_model(sphere, sphere, rng);
  const double inflated = scan_to_model(inflate_mesh(sphere, 0.005), sphere, rng);
  const bool pass = self < 1e-12 && std::abs(inflated - 0.005) <= 0.15 * 0.005;
  return {pass, fmt("self %.3g mm, 5 mm inflation %.3f mm", 1e3 * self, 1e3 * inflated)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"kinematic round trip", kinematic_round_trip},
      {"landmark correction cancels on reference points", landmark_cancellation},
      {"corrected beats linear unposing", corrected_unposing},
      {"rotation validity", rotation_validity},
      {"attention geometry", attention_geometry},
      {"toy end-to-end", end_to_end},
      {"cascade benefit", cascade_benefit},
      {"procrustes benefit", procrustes_benefit},
      {"missing-landmark robustness", missing_landmarks},
      {"determinism and freezing", determinism},
      {"metric sanity", metric_sanity},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int number = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.count(number)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s: %s (%s) [%.0f s]\n", number, o.pass ? "PASS" : "FAIL", criteria[k].first,
                o.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
