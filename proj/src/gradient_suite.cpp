#include "sparsebody/gradient_suite.hpp"

#include "sparsebody/autodiff/grad_check.hpp"
#include "sparsebody/dataset.hpp"
#include "sparsebody/errors.hpp"
#include "sparsebody/inverse_kinematics.hpp"
#include "sparsebody/losses.hpp"
#include "sparsebody/random.hpp"
#include "sparsebody/skinning.hpp"

#include <chrono>
#include <numeric>
#include <sstream>

namespace sparsebody {

using ad::Tensor;

namespace {

// Piecewise-smooth terms (absolute values, nearest-vertex choice) need a step
// small enough to stay inside one piece.
constexpr double kSmoothStep = 1e-5;
constexpr double kPiecewiseStep = 1e-8;
constexpr int kMaxRedraws = 20;

Tensor uniform(std::mt19937_64& rng, ad::Shape shape, double lo, double hi) {
  Index n = 1;
  for (Index d : shape) n *= d;
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Array a(n);
  for (Index i = 0; i < n; ++i) a[i] = u(rng);
  return Tensor(std::move(shape), std::move(a));
}

Tensor batch_of(const RowMatrixXd& points) {
  return Tensor({1, points.rows(), points.cols()}, points.reshaped<Eigen::RowMajor>().array());
}

// One checked function: draws a point and returns the function to check at it.
struct Check {
  std::string name;
  double step;
  std::function<std::pair<ad::ScalarFunction, Tensor>(std::mt19937_64&)> draw;
};

}  // namespace

bool GradientSuiteResult::passed() const {
  for (const auto& c : checks) {
    if (c.failed > 0 || c.points == 0) return false;
  }
  return !checks.empty();
}

GradientSuiteResult run_gradient_suite(const BodyModel& model, int points, std::uint64_t seed, double tolerance,
                                       const std::function<void(const GradientCheckSummary&)>& progress) {
  const auto start = std::chrono::steady_clock::now();
  const Index m = model.joint_count(), l = model.landmark_count(), p = model.vertex_count();
  const auto limits = toy_pose_limits();
  if (static_cast<Index>(limits.size()) != m) throw ConfigurationError("gradient suite needs the toy joint layout");
  const auto patches = patch_lists(model.landmarks);
  const ModelTensors tensors(model);
  const CorrectionTensors correction(model);
  const QuaternionBounds bounds = bounds_from_euler(limits, 500, seed);
  const auto medians = model.landmarks.medians();

  // A posed body near which the point and inverse-kinematic terms are checked.
  struct Scene {
    QuatArray q;
    Tensor joints, landmarks, rest_joints, rest_vertices, vertices;
  };
  auto scene = [&](std::mt19937_64& rng) {
    Scene s;
    s.q = sample_pose(limits, rng);
    ShapeVector beta;
    for (Index k = 0; k < kShapeCount; ++k) beta[k] = std::uniform_real_distribution<double>(-2, 2)(rng);
    const PosedBody body = full_forward({s.q, beta}, model);
    const Eigen::RowVector3d root = body.joints.row(0), rest_root = body.rest_joints.row(0);
    s.joints = ad::add(batch_of(body.joints.rowwise() - root), uniform(rng, {1, m, 3}, -0.01, 0.01));
    s.landmarks = ad::add(batch_of(body.vertices(medians, Eigen::all).rowwise() - root), uniform(rng, {1, l, 3}, -0.02, 0.02));
    s.rest_joints = batch_of(body.rest_joints.rowwise() - rest_root);
    s.rest_vertices = batch_of(body.rest_vertices.rowwise() - rest_root);
    s.vertices = batch_of(body.vertices.rowwise() - root);
    return s;
  };

  std::vector<Check> checks;
  checks.push_back({"dae", kSmoothStep, [&](std::mt19937_64& rng) {
                      const Tensor target = uniform(rng, {2, l, 3}, -1, 1);
                      ad::Array mask = ad::Array::Ones(2 * l * 3);
                      for (Index i = 0; i < mask.size(); i += 3) {
                        if (std::uniform_real_distribution<double>(0, 1)(rng) < 0.2) mask.segment(i, 3).setZero();
                      }
                      const Tensor mt({2, l, 3}, mask);
                      return std::pair{ad::ScalarFunction([target, mt](const Tensor& x) { return loss_dae(target, x, mt); }),
                                       uniform(rng, {2, l, 3}, -1, 1)};
                    }});
  checks.push_back({"phi", kSmoothStep, [&](std::mt19937_64& rng) {
                      return std::pair{ad::ScalarFunction([&bounds](const Tensor& x) { return loss_phi(x, bounds); }),
                                       uniform(rng, {2, m, 4}, -1.2, 1.2)};
                    }});
  checks.push_back({"beta", kSmoothStep, [&](std::mt19937_64& rng) {
                      return std::pair{ad::ScalarFunction(loss_beta), uniform(rng, {2, kShapeCount}, -8, 8)};
                    }});
  checks.push_back({"joints", kSmoothStep, [&](std::mt19937_64& rng) {
                      const Tensor teacher = uniform(rng, {2, m, 3}, -1, 1);
                      return std::pair{ad::ScalarFunction([teacher](const Tensor& x) { return loss_joints(teacher, x); }),
                                       uniform(rng, {2, m, 3}, -1, 1)};
                    }});
  checks.push_back({"surface/landmarks", kPiecewiseStep, [&](std::mt19937_64& rng) {
                      const Scene s = scene(rng);
                      const Tensor v = s.vertices;
                      return std::pair{ad::ScalarFunction([v, &patches](const Tensor& x) { return loss_surface(x, v, patches); }),
                                       s.landmarks};
                    }});
  checks.push_back({"surface/vertices", kPiecewiseStep, [&](std::mt19937_64& rng) {
                      const Scene s = scene(rng);
                      const Tensor lm = s.landmarks;
                      return std::pair{ad::ScalarFunction([lm, &patches](const Tensor& x) { return loss_surface(lm, x, patches); }),
                                       s.vertices};
                    }});
  checks.push_back({"surface/per-coordinate", kPiecewiseStep, [&](std::mt19937_64& rng) {
                      const Scene s = scene(rng);
                      const Tensor v = s.vertices;
                      return std::pair{ad::ScalarFunction([v, &patches](const Tensor& x) {
                                         return loss_surface(x, v, patches, SurfaceAssignment::kPerCoordinate);
                                       }),
                                       s.landmarks};
                    }});
  checks.push_back({"unpose/quaternions", kPiecewiseStep, [&](std::mt19937_64& rng) {
                      const Scene s = scene(rng);
                      return std::pair{ad::ScalarFunction([s, &correction, &model, &patches](const Tensor& x) {
                                         return loss_unpose(tape_rotations(x), s.joints, s.landmarks, s.rest_joints,
                                                            s.rest_vertices, correction, model.parents, patches)
                                             .total;
                                       }),
                                       batch_of(s.q)};
                    }});
  checks.push_back({"unpose/joints+landmarks", kPiecewiseStep, [&](std::mt19937_64& rng) {
                      const Scene s = scene(rng);
                      const Tensor rot = tape_rotations(batch_of(s.q));
                      const ad::Array x = (ad::Array(s.joints.size() + s.landmarks.size()) << s.joints.data(), s.landmarks.data()).finished();
                      std::vector<Index> ji(static_cast<std::size_t>(m * 3)), li(static_cast<std::size_t>(l * 3));
                      std::iota(ji.begin(), ji.end(), 0);
                      std::iota(li.begin(), li.end(), m * 3);
                      return std::pair{ad::ScalarFunction([=, &correction, &model, &patches](const Tensor& v) {
                                         const Tensor j = ad::reshape(ad::gather(v, 0, ji), {1, m, 3});
                                         const Tensor lm = ad::reshape(ad::gather(v, 0, li), {1, l, 3});
                                         return loss_unpose(rot, j, lm, s.rest_joints, s.rest_vertices, correction,
                                                            model.parents, patches)
                                             .total;
                                       }),
                                       Tensor({x.size()}, x)};
                    }});
  checks.push_back({"full_forward", kSmoothStep, [&](std::mt19937_64& rng) {
                      const Tensor weights = uniform(rng, {1, p, 3}, -1, 1);
                      std::vector<Index> qi(static_cast<std::size_t>(4 * m)), bi(static_cast<std::size_t>(kShapeCount));
                      std::iota(qi.begin(), qi.end(), 0);
                      std::iota(bi.begin(), bi.end(), 4 * m);
                      ad::Array x(4 * m + kShapeCount);
                      x.head(4 * m) = sample_pose(limits, rng).reshaped<Eigen::RowMajor>().array();
                      x.tail(kShapeCount) = uniform(rng, {kShapeCount}, -2, 2).data();
                      return std::pair{ad::ScalarFunction([=, &tensors](const Tensor& v) {
                                         const TapeBody body = tape_forward(ad::reshape(ad::gather(v, 0, qi), {1, m, 4}),
                                                                            ad::reshape(ad::gather(v, 0, bi), {1, kShapeCount}),
                                                                            tensors);
                                         return ad::add(ad::sum(ad::mul(body.vertices, weights)),
                                                        ad::sum(ad::mul(body.joints, ad::gather(weights, 1, std::vector<Index>(m, 0)))));
                                       }),
                                       Tensor({x.size()}, x)};
                    }});

  GradientSuiteResult result;
  for (std::size_t c = 0; c < checks.size(); ++c) {
    auto rng = stream_rng(seed, c, 0x6C);
    GradientCheckSummary summary;
    summary.name = checks[c].name;
    while (summary.points < points && summary.redrawn <= kMaxRedraws) {
      auto [f, x] = checks[c].draw(rng);
      const ad::GradCheckReport r = ad::grad_check(f, x, checks[c].step, tolerance);
      if (r.status == ad::GradCheckStatus::kSkipped) {
        ++summary.redrawn;
        continue;
      }
      ++summary.points;
      summary.worst_relative_error = std::max(summary.worst_relative_error, r.max_relative_error);
      if (!r.passed()) {
        if (summary.failed++ == 0) summary.first_failure = r.message;
      }
    }
    if (progress) progress(summary);
    result.checks.push_back(std::move(summary));
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace sparsebody
