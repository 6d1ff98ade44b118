#include "sparsebody/body_model.hpp"

#include "sparsebody/errors.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <string>

namespace sparsebody {
namespace {

std::string extent_message(const std::string& what, Index got, Index want) {
  return what + " has extent " + std::to_string(got) + ", expected " + std::to_string(want);
}

}  // namespace

void validate(const BodyModel& model) {
  const Index p = model.vertex_count();
  const Index m = model.joint_count();
  if (p == 0) throw ModelValidationError("model has no vertices");
  if (m == 0) throw ModelValidationError("model has no joints");
  if (model.shape_blendshapes.rows() != 3 * p || model.shape_blendshapes.cols() != kShapeCount) {
    throw ModelValidationError("blendshapes must be " + std::to_string(p) + "x3x10");
  }
  if (model.joint_regressor.rows() != m) throw ModelValidationError(extent_message("joint regressor rows", model.joint_regressor.rows(), m));
  if (model.joint_regressor.cols() != p) throw ModelValidationError(extent_message("joint regressor cols", model.joint_regressor.cols(), p));
  if (model.skinning_weights.rows() != p) throw ModelValidationError(extent_message("skinning weight rows", model.skinning_weights.rows(), p));
  if (model.skinning_weights.cols() != m) throw ModelValidationError(extent_message("skinning weight cols", model.skinning_weights.cols(), m));
  if (!model.template_vertices.allFinite() || !model.shape_blendshapes.allFinite() ||
      !model.joint_regressor.allFinite() || !model.skinning_weights.allFinite()) {
    throw ModelValidationError("model arrays contain non-finite values");
  }
  for (Index v = 0; v < p; ++v) {
    const auto row = model.skinning_weights.row(v);
    if (row.minCoeff() < 0.0) throw ModelValidationError("negative skinning weight on vertex " + std::to_string(v));
    if (std::abs(row.sum() - 1.0) > 1e-6) {
      throw ModelValidationError("skinning weights of vertex " + std::to_string(v) + " sum to " + std::to_string(row.sum()));
    }
  }
  if (model.parents[0] != -1) throw ModelValidationError("joint 0 must be the root (parent -1)");
  for (Index j = 1; j < m; ++j) {
    const int parent = model.parents[static_cast<std::size_t>(j)];
    if (parent < 0 || parent >= j) {
      throw ModelValidationError("joint " + std::to_string(j) + " has parent " + std::to_string(parent) +
                                 "; parents must precede children");
    }
  }
  for (Index f = 0; f < model.faces.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      if (model.faces(f, c) < 0 || model.faces(f, c) >= p) throw ModelValidationError("face " + std::to_string(f) + " out of range");
    }
  }
  try {
    model.landmarks.check_vertex_range(p);
  } catch (const ConfigurationError& e) {
    throw ModelValidationError(e.what());
  }
}

Archive to_archive(const BodyModel& model) {
  const Index p = model.vertex_count();
  Archive a;
  a.put("template", model.template_vertices);
  std::vector<double> shapes(model.shape_blendshapes.data(), model.shape_blendshapes.data() + model.shape_blendshapes.size());
  a.put("blendshapes", {p, 3, kShapeCount}, std::move(shapes));
  a.put("joint_regressor", model.joint_regressor);
  a.put("skinning_weights", model.skinning_weights);
  a.put_ints("parents", {model.joint_count()}, {model.parents.begin(), model.parents.end()});
  std::vector<std::int64_t> faces(model.faces.data(), model.faces.data() + model.faces.size());
  a.put_ints("faces", {model.faces.rows(), 3}, std::move(faces));
  a.put_text("patches", model.landmarks.to_patch_table());
  return a;
}

BodyModel from_archive(const Archive& a) {
  BodyModel model;
  const auto& tdims = a.dims("template");
  if (tdims.size() != 2 || tdims[1] != 3) throw ModelValidationError("template must be p x 3");
  const Index p = tdims[0];
  model.template_vertices = a.matrix("template", p);
  const auto& sdims = a.dims("blendshapes");
  if (sdims != std::vector<std::int64_t>{p, 3, kShapeCount}) throw ModelValidationError("blendshapes must be p x 3 x 10");
  model.shape_blendshapes = a.matrix("blendshapes", 3 * p);
  const auto& parents = a.ints("parents");
  model.parents.assign(parents.begin(), parents.end());
  const Index m = static_cast<Index>(parents.size());
  if (m == 0) throw ModelValidationError("model has no joints");
  model.joint_regressor = a.matrix("joint_regressor", m);
  model.skinning_weights = a.matrix("skinning_weights", p);
  const auto& faces = a.ints("faces");
  if (faces.size() % 3 != 0) throw ModelValidationError("faces must be a triangle list");
  model.faces.resize(static_cast<Index>(faces.size() / 3), 3);
  for (std::size_t i = 0; i < faces.size(); ++i) model.faces.data()[i] = static_cast<int>(faces[i]);
  try {
    model.landmarks = LandmarkDictionary::from_patch_table(a.text("patches"));
  } catch (const ConfigurationError& e) {
    throw ModelValidationError(std::string("patch table: ") + e.what());
  }
  validate(model);
  return model;
}

BodyModel load_body_model(const std::filesystem::path& path) { return from_archive(Archive::load(path)); }

void save_body_model(const BodyModel& model, const std::filesystem::path& path) { to_archive(model).save(path); }

PoseShape PoseShape::identity(Index joints) {
  PoseShape ps;
  ps.quaternions = QuatArray::Zero(joints, 4);
  ps.quaternions.col(0).setOnes();
  return ps;
}

void PoseShape::normalize() {
  for (Index j = 0; j < quaternions.rows(); ++j) {
    const double n = quaternions.row(j).norm();
    if (!(n > 1e-8)) throw DegenerateRotationError("quaternion " + std::to_string(j) + " has norm " + std::to_string(n));
    quaternions.row(j) /= n;
  }
}

Rotations<double> quat_to_rotmat(const QuatArray& quaternions) {
  Rotations<double> out(static_cast<std::size_t>(quaternions.rows()));
  for (Index j = 0; j < quaternions.rows(); ++j) {
    out[static_cast<std::size_t>(j)] = quat_to_rotmat<double>(quaternions.row(j).transpose());
  }
  return out;
}

std::pair<Points3, Points3> shape_body(const Eigen::Ref<const Eigen::VectorXd>& betas, const BodyModel& model) {
  if (betas.size() != kShapeCount) {
    throw DimensionError("shape_body: expected 10 shape coefficients, got " + std::to_string(betas.size()));
  }
  const Eigen::VectorXd offsets = model.shape_blendshapes * betas;
  Points3 rest = model.template_vertices + Eigen::Map<const Points3>(offsets.data(), model.vertex_count(), 3);
  Points3 joints = model.joint_regressor * rest;
  return {std::move(rest), std::move(joints)};
}

Points3 forward_kinematics(const Rotations<double>& rotations, const Points3& rest_joints,
                           const std::vector<int>& parents, const Points3& points, const RowMatrixXd& weights) {
  const Index m = static_cast<Index>(parents.size());
  if (static_cast<Index>(rotations.size()) != m || rest_joints.rows() != m) {
    throw DimensionError("forward_kinematics: rotations and rest joints must have one entry per joint");
  }
  if (weights.rows() != points.rows() || weights.cols() != m) {
    throw DimensionError("forward_kinematics: weights must be points x joints");
  }
  return skin_points<double>(world_transforms<double>(rotations, rest_joints, parents), rest_joints, points, weights);
}

Points3 posed_joints(const Transforms<double>& world) {
  Points3 out(static_cast<Index>(world.size()), 3);
  for (std::size_t j = 0; j < world.size(); ++j) out.row(static_cast<Index>(j)) = world[j].topRightCorner<3, 1>().transpose();
  return out;
}

PosedBody full_forward(const PoseShape& pose_shape, const BodyModel& model) {
  if (pose_shape.quaternions.rows() != model.joint_count()) {
    throw DimensionError("full_forward: expected " + std::to_string(model.joint_count()) + " quaternions");
  }
  PosedBody body;
  std::tie(body.rest_vertices, body.rest_joints) = shape_body(pose_shape.betas, model);
  body.transforms = world_transforms<double>(quat_to_rotmat(pose_shape.quaternions), body.rest_joints, model.parents);
  body.joints = posed_joints(body.transforms);
  body.vertices = skin_points<double>(body.transforms, body.rest_joints, body.rest_vertices, model.skinning_weights);
  return body;
}

Points3 vertex_normals(const Points3& vertices, const Faces& faces) {
  Points3 normals = Points3::Zero(vertices.rows(), 3);
  std::vector<bool> used(static_cast<std::size_t>(vertices.rows()), false);
  for (Index f = 0; f < faces.rows(); ++f) {
    const Eigen::Vector3d a = vertices.row(faces(f, 0)).transpose();
    const Eigen::Vector3d b = vertices.row(faces(f, 1)).transpose();
    const Eigen::Vector3d c = vertices.row(faces(f, 2)).transpose();
    // Cross product length is twice the area, so this sum is area weighted.
    const Eigen::Vector3d n = (b - a).cross(c - a);
    for (int k = 0; k < 3; ++k) {
      normals.row(faces(f, k)) += n.transpose();
      used[static_cast<std::size_t>(faces(f, k))] = true;
    }
  }
  for (Index v = 0; v < vertices.rows(); ++v) {
    if (!used[static_cast<std::size_t>(v)]) continue;
    const double len = normals.row(v).norm();
    if (!(len > 1e-14)) throw ModelValidationError("vertex " + std::to_string(v) + " touches only degenerate faces");
    normals.row(v) /= len;
  }
  return normals;
}

BodyModel inflate_template(const BodyModel& model, double offset) {
  if (offset < 0.0) throw ConfigurationError("inflation offset must be non-negative");
  if (model.faces.rows() == 0) throw ModelValidationError("inflation needs faces");
  BodyModel out = model;
  if (offset == 0.0) return out;
  out.template_vertices += offset * vertex_normals(model.template_vertices, model.faces);
  return out;
}

RowMatrixXd landmark_weights(const BodyModel& model) {
  RowMatrixXd w(model.landmark_count(), model.joint_count());
  for (Index i = 0; i < model.landmark_count(); ++i) w.row(i) = model.skinning_weights.row(model.landmarks[i].median);
  return w;
}

Points3 median_template_points(const BodyModel& model) {
  Points3 out(model.landmark_count(), 3);
  for (Index i = 0; i < model.landmark_count(); ++i) out.row(i) = model.template_vertices.row(model.landmarks[i].median);
  return out;
}

}  // namespace sparsebody
