#include "oracles.hpp"
#include "sparsebody/autodiff/grad_check.hpp"
#include "sparsebody/body_model.hpp"
#include "sparsebody/errors.hpp"
#include "sparsebody/skinning.hpp"
#include "sparsebody/toy_model.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <filesystem>
#include <numeric>
#include <random>
#include <set>

using namespace sparsebody;

namespace {

const BodyModel& toy() {
  static const BodyModel model = make_toy_model();
  return model;
}

QuatArray random_pose(std::mt19937_64& rng) {
  const auto limits = toy_pose_limits();
  QuatArray q(24, 4);
  for (Index j = 0; j < 24; ++j) {
    const auto& box = limits[static_cast<std::size_t>(j)];
    double e[3];
    for (int k = 0; k < 3; ++k) e[k] = std::uniform_real_distribution<double>(box.lower[k], box.upper[k])(rng);
    q.row(j) = euler_xyz_to_quat(e[0], e[1], e[2]).transpose();
  }
  return q;
}

// Two joints: root at the origin, child at (0,1,0).
BodyModel two_link() {
  BodyModel m;
  m.template_vertices.resize(2, 3);
  m.template_vertices << 0, 0, 0, 0, 2, 0;
  m.shape_blendshapes = RowMatrixXd::Zero(6, kShapeCount);
  m.joint_regressor.resize(2, 2);
  m.joint_regressor << 1, 0, 0, 0.5;
  m.skinning_weights.resize(2, 2);
  m.skinning_weights << 1, 0, 0, 1;
  m.parents = {-1, 0};
  return m;
}

}  // namespace

TEST_CASE("quaternion examples") {
  const QuatArray id = PoseShape::identity(1).quaternions;
  CHECK(quat_to_rotmat(id)[0].isApprox(Eigen::Matrix3d::Identity()));

  QuatArray quarter(1, 4);
  quarter << std::sqrt(0.5), std::sqrt(0.5), 0, 0;
  const Eigen::Vector3d y = quat_to_rotmat(quarter)[0] * Eigen::Vector3d::UnitY();
  CHECK((y - Eigen::Vector3d::UnitZ()).norm() < 1e-12);

  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    QuatArray q = oracle::uniform(rng, 4).matrix().transpose();
    const QuatArray neg = -q;
    CHECK((quat_to_rotmat(q)[0] - quat_to_rotmat(neg)[0]).cwiseAbs().maxCoeff() < 1e-12);
  }
  QuatArray zero = QuatArray::Zero(1, 4);
  CHECK_THROWS_AS(quat_to_rotmat(zero), DegenerateRotationError);
}

TEST_CASE("quaternion rotation agrees with axis-angle oracle") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const Eigen::Vector3d axis = oracle::uniform(rng, 3).matrix().normalized();
    const double angle = oracle::uniform(rng, 1, -3.0, 3.0)[0];
    QuatArray q(1, 4);
    q << std::cos(angle / 2), std::sin(angle / 2) * axis.transpose();
    q *= 2.5;  // unnormalized input
    CHECK((quat_to_rotmat(q)[0] - oracle::axis_angle(axis, angle)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("property: rotations are orthonormal with det +1") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 500; ++t) {
    QuatArray q = oracle::nonzero_uniform(rng, 4, 0.01).matrix().transpose();
    q *= std::pow(10.0, oracle::uniform(rng, 1, -3, 3)[0]);
    const Eigen::Matrix3d r = quat_to_rotmat(q)[0];
    CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(r.determinant() - 1.0) < 1e-6);
  }
}

TEST_CASE("normalized pose has unit quaternions") {
  std::mt19937_64 rng(2);
  PoseShape ps;
  ps.quaternions = oracle::nonzero_uniform(rng, 24 * 4).matrix().reshaped<Eigen::RowMajor>(24, 4);
  ps.normalize();
  for (Index j = 0; j < 24; ++j) CHECK(std::abs(ps.quaternions.row(j).norm() - 1.0) < 1e-9);
}

TEST_CASE("shape_body") {
  const BodyModel& m = toy();
  const auto [t0, j0] = shape_body(ShapeVector::Zero(), m);
  CHECK(t0 == m.template_vertices);
  // Direct matrix-product oracle for the rest joints.
  Points3 expected = Points3::Zero(m.joint_count(), 3);
  for (Index j = 0; j < m.joint_count(); ++j) {
    for (Index v = 0; v < m.vertex_count(); ++v) expected.row(j) += m.joint_regressor(j, v) * m.template_vertices.row(v);
  }
  CHECK((j0 - expected).cwiseAbs().maxCoeff() < 1e-12);

  std::mt19937_64 rng(9);
  const ShapeVector beta = oracle::uniform(rng, 10, -2, 2).matrix();
  const Points3 d1 = shape_body(beta, m).first - m.template_vertices;
  const Points3 d2 = shape_body(2 * beta, m).first - m.template_vertices;
  CHECK((d2 - 2 * d1).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(shape_body(Eigen::VectorXd::Zero(9), m), DimensionError);
}

TEST_CASE("forward kinematics examples") {
  const BodyModel chain = two_link();
  const Points3 joints = shape_body(ShapeVector::Zero(), chain).second;
  CHECK(joints.row(1).isApprox(Eigen::RowVector3d(0, 1, 0)));

  Rotations<double> r(2, Eigen::Matrix3d::Identity());
  r[1] = oracle::axis_angle(Eigen::Vector3d::UnitZ(), std::numbers::pi / 2);
  Points3 point(1, 3);
  point << 0, 2, 0;
  RowMatrixXd w(1, 2);
  w << 0, 1;
  const Points3 posed = forward_kinematics(r, joints, chain.parents, point, w);
  CHECK((posed.row(0) - Eigen::RowVector3d(-1, 1, 0)).norm() < 1e-12);

  Rotations<double> id(24, Eigen::Matrix3d::Identity());
  const BodyModel& m = toy();
  const Points3 rest = forward_kinematics(id, shape_body(ShapeVector::Zero(), m).second, m.parents,
                                          m.template_vertices, m.skinning_weights);
  CHECK((rest - m.template_vertices).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("property: root-only rotation is an isometry") {
  const BodyModel& m = toy();
  std::mt19937_64 rng(21);
  const Points3 joints = shape_body(ShapeVector::Zero(), m).second;
  for (int t = 0; t < 5; ++t) {
    Rotations<double> r(24, Eigen::Matrix3d::Identity());
    r[0] = oracle::axis_angle(oracle::uniform(rng, 3).matrix(), oracle::uniform(rng, 1, -3, 3)[0]);
    const Points3 posed = forward_kinematics(r, joints, m.parents, m.template_vertices, m.skinning_weights);
    double worst = 0.0;
    for (Index a = 0; a < m.vertex_count(); a += 7) {
      for (Index b = a + 1; b < m.vertex_count(); b += 13) {
        worst = std::max(worst, std::abs((posed.row(a) - posed.row(b)).norm() -
                                         (m.template_vertices.row(a) - m.template_vertices.row(b)).norm()));
      }
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("full_forward") {
  const BodyModel& m = toy();
  const PosedBody neutral = full_forward(PoseShape::identity(24), m);
  CHECK((neutral.vertices - m.template_vertices).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((neutral.joints - neutral.rest_joints).cwiseAbs().maxCoeff() < 1e-12);

  std::mt19937_64 rng(4);
  PoseShape ps;
  ps.quaternions = random_pose(rng);
  ps.betas = oracle::uniform(rng, 10, -2, 2).matrix();
  const PosedBody body = full_forward(ps, m);
  CHECK((body.joints.row(0) - body.rest_joints.row(0)).norm() < 1e-12);
  for (const auto& g : body.transforms) {
    const Eigen::Matrix3d r = g.topLeftCorner<3, 3>();
    CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(r.determinant() - 1.0) < 1e-6);
  }

  // Translation covariance: shifting every rest point (hence the root) shifts
  // the output by the same amount.
  const Eigen::RowVector3d shift(0.3, -0.2, 1.1);
  const auto rotations = quat_to_rotmat(ps.quaternions);
  const Points3 moved_joints = body.rest_joints.rowwise() + shift;
  const Points3 moved_vertices = body.rest_vertices.rowwise() + shift;
  const Points3 moved = forward_kinematics(rotations, moved_joints, m.parents, moved_vertices, m.skinning_weights);
  CHECK(((moved.rowwise() - shift) - body.vertices).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("property: identical transforms blend exactly") {
  // All joints rotated only at the root: every vertex sees the same transform.
  const BodyModel& m = toy();
  const Eigen::Matrix3d r = oracle::axis_angle(Eigen::Vector3d(1, 2, 3), 0.7);
  Rotations<double> rot(24, Eigen::Matrix3d::Identity());
  rot[0] = r;
  const Points3 joints = shape_body(ShapeVector::Zero(), m).second;
  const Points3 posed = forward_kinematics(rot, joints, m.parents, m.template_vertices, m.skinning_weights);
  const Eigen::RowVector3d root = joints.row(0);
  const Points3 expected = ((m.template_vertices.rowwise() - root) * r.transpose()).rowwise() + root;
  CHECK((posed - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("tape forward matches the value path") {
  const BodyModel& m = toy();
  const ModelTensors mt(m);
  std::mt19937_64 rng(8);
  const Index batch = 3;
  ad::Array q(batch * 24 * 4), b(batch * 10);
  std::vector<PoseShape> frames(batch);
  for (Index i = 0; i < batch; ++i) {
    frames[i].quaternions = random_pose(rng) * 1.7;
    frames[i].betas = oracle::uniform(rng, 10, -2, 2).matrix();
    q.segment(i * 96, 96) = frames[i].quaternions.reshaped<Eigen::RowMajor>().array();
    b.segment(i * 10, 10) = frames[i].betas.array();
  }
  const TapeBody body = tape_forward(ad::Tensor({batch, 24, 4}, q), ad::Tensor({batch, 10}, b), mt);
  for (Index i = 0; i < batch; ++i) {
    const PosedBody ref = full_forward(frames[i], m);
    const Eigen::Map<const Points3> verts(body.vertices.data().data() + i * m.vertex_count() * 3, m.vertex_count(), 3);
    const Eigen::Map<const Points3> joints(body.joints.data().data() + i * 72, 24, 3);
    CHECK((verts - ref.vertices).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((joints - ref.joints).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("gradient of mean posed vertices matches finite differences") {
  const BodyModel& m = toy();
  const ModelTensors mt(m);
  std::mt19937_64 rng(17);
  std::vector<Index> qi(96), bi(10);
  std::iota(qi.begin(), qi.end(), 0);
  std::iota(bi.begin(), bi.end(), 96);
  const auto f = [&](const ad::Tensor& x) {
    const ad::Tensor q = ad::reshape(ad::gather(x, 0, qi), {1, 24, 4});
    const ad::Tensor b = ad::reshape(ad::gather(x, 0, bi), {1, 10});
    const TapeBody body = tape_forward(q, b, mt);
    // The extra x term keeps the three axes from contributing equally.
    return ad::add(ad::mean(body.vertices), ad::mean(ad::gather(body.vertices, 2, {0})));
  };
  for (int t = 0; t < 3; ++t) {
    ad::Array x(106);
    x.head(96) = random_pose(rng).reshaped<Eigen::RowMajor>().array();
    x.tail(10) = oracle::uniform(rng, 10, -2, 2);
    const auto report = ad::grad_check(f, ad::Tensor({106}, x));
    CHECK_MESSAGE(report.passed(), report.message);
  }
}

TEST_CASE("inflate_template") {
  const BodyModel& m = toy();
  CHECK(inflate_template(m, 0.0).template_vertices == m.template_vertices);

  const Mesh sphere = make_icosphere(1.0, 4);
  BodyModel s;
  s.template_vertices = sphere.vertices;
  s.faces = sphere.faces;
  const Points3 inflated = inflate_template(s, 0.01).template_vertices;
  const Eigen::VectorXd radius = inflated.rowwise().norm();
  CHECK(radius.minCoeff() > 1.01 - 1e-4);
  CHECK(radius.maxCoeff() < 1.01 + 1e-4);

  CHECK_THROWS_AS(inflate_template(m, -1.0), ConfigurationError);

  Points3 flat(3, 3);
  flat << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  Faces degenerate(1, 3);
  degenerate << 0, 1, 2;
  CHECK_THROWS_AS(vertex_normals(flat, degenerate), ModelValidationError);
}

TEST_CASE("toy model structure") {
  const BodyModel& m = toy();
  CHECK(m.joint_count() == 24);
  CHECK(m.landmark_count() == 67);
  CHECK(m.vertex_count() > 850);
  CHECK(m.vertex_count() < 950);
  std::set<Index> medians;
  for (const auto& p : m.landmarks.patches()) medians.insert(p.median);
  CHECK(medians.size() == 67);
  CHECK(m.landmarks.index_of("LSHO") != m.landmarks.index_of("RSHO"));

  // Normals point away from the body's interior on the limbs: the left
  // fingertip cap normal points along +x.
  const Points3 n = vertex_normals(m.template_vertices, m.faces);
  Index fingertip = 0;
  m.template_vertices.col(0).maxCoeff(&fingertip);
  CHECK(n(fingertip, 0) > 0.5);
  // Head-top normal points up.
  Index top = 0;
  m.template_vertices.col(1).maxCoeff(&top);
  CHECK(n(top, 1) > 0.5);

  // Left/right symmetry of the rest joints.
  const Points3 j = shape_body(ShapeVector::Zero(), m).second;
  CHECK((j.row(1) - Eigen::RowVector3d(0.09, 0.87, 0)).norm() < 1e-12);
  CHECK(std::abs(j(16, 0) + j(17, 0)) < 1e-12);
}

TEST_CASE("model validation and archive round trip") {
  const BodyModel& m = toy();
  const auto path = std::filesystem::temp_directory_path() / "sparsebody_toy_model.sbm";
  save_body_model(m, path);
  const BodyModel back = load_body_model(path);
  std::filesystem::remove(path);
  CHECK(back.template_vertices == m.template_vertices);
  CHECK(back.shape_blendshapes == m.shape_blendshapes);
  CHECK(back.skinning_weights == m.skinning_weights);
  CHECK(back.joint_regressor == m.joint_regressor);
  CHECK(back.parents == m.parents);
  CHECK(back.faces == m.faces);
  CHECK(back.landmarks.to_text() == m.landmarks.to_text());

  BodyModel bad = m;
  bad.skinning_weights(0, 0) += 0.1;
  CHECK_THROWS_AS(validate(bad), ModelValidationError);
  bad = m;
  bad.parents[3] = 5;
  CHECK_THROWS_AS(validate(bad), ModelValidationError);
  bad = m;
  bad.parents[0] = 1;
  CHECK_THROWS_AS(validate(bad), ModelValidationError);
  bad = m;
  bad.joint_regressor.conservativeResize(23, Eigen::NoChange);
  CHECK_THROWS_AS(validate(bad), ModelValidationError);
}
