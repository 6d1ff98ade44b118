#include "sparsebody/skinning.hpp"

#include "sparsebody/errors.hpp"

namespace sparsebody {

using ad::Shape;
using ad::Tensor;

ModelTensors::ModelTensors(const BodyModel& model)
    : template_flat({3 * model.vertex_count()},
                    Eigen::Map<const ad::Array>(model.template_vertices.data(), model.template_vertices.size())),
      blendshapes_t(Tensor::from_matrix(model.shape_blendshapes.transpose())),
      joint_regressor(Tensor::from_matrix(model.joint_regressor)),
      skinning_weights(Tensor::from_matrix(model.skinning_weights)),
      parents(model.parents),
      vertices(model.vertex_count()) {
  if (model.landmark_count() > 0) landmark_weights = Tensor::from_matrix(sparsebody::landmark_weights(model));
}

Tensor take(const Tensor& x, Index j) {
  Shape out;
  for (Index a = 0; a < x.rank(); ++a) {
    if (a != 1) out.push_back(x.dim(a));
  }
  return ad::reshape(ad::gather(x, 1, {j}), out);
}

Tensor tape_rotations(const Tensor& quaternions) {
  if (quaternions.rank() != 3 || quaternions.dim(2) != 4) {
    throw DimensionError("tape_rotations: expected [B, m, 4], got " + ad::shape_string(quaternions.shape()));
  }
  return ad::quat_to_rotation(ad::quat_normalize(quaternions));
}

Tensor tape_shape_vertices(const Tensor& betas, const ModelTensors& model) {
  if (betas.rank() != 2 || betas.dim(1) != kShapeCount) {
    throw DimensionError("shape_body: expected betas [B, 10], got " + ad::shape_string(betas.shape()));
  }
  const Tensor flat = ad::add_bias(ad::matmul(betas, model.blendshapes_t), model.template_flat);
  return ad::reshape(flat, {betas.dim(0), model.vertices, 3});
}

Tensor tape_regress_joints(const Tensor& rest_vertices, const ModelTensors& model) {
  return ad::matmul(model.joint_regressor, rest_vertices);
}

TapeChain tape_chain(const Tensor& rotations, const Tensor& rest_joints, const std::vector<int>& parents) {
  const Index batch = rotations.dim(0);
  const auto m = parents.size();
  if (rotations.dim(1) != static_cast<Index>(m) || rest_joints.dim(1) != static_cast<Index>(m)) {
    throw DimensionError("tape_chain: rotations and rest joints must have one entry per joint");
  }
  TapeChain chain;
  std::vector<Tensor> rest(m), posed(m), blocks(m);
  chain.world_rotations.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    const Tensor r = take(rotations, static_cast<Index>(j));
    rest[j] = ad::reshape(take(rest_joints, static_cast<Index>(j)), {batch, 3, 1});
    const int p = parents[j];
    if (p < 0) {
      chain.world_rotations[j] = r;
      posed[j] = rest[j];
    } else {
      const auto pu = static_cast<std::size_t>(p);
      chain.world_rotations[j] = ad::compose(chain.world_rotations[pu], r);
      posed[j] = ad::add(posed[pu], ad::compose(chain.world_rotations[pu], ad::sub(rest[j], rest[pu])));
    }
    const Tensor offset = ad::sub(posed[j], ad::compose(chain.world_rotations[j], rest[j]));
    blocks[j] = ad::reshape(ad::concatenate({chain.world_rotations[j], offset}, 2), {batch, 1, 12});
  }
  chain.skinning = ad::concatenate(std::span<const Tensor>(blocks), 1);
  chain.joints = ad::reshape(ad::concatenate(std::span<const Tensor>(posed), 1), {batch, static_cast<Index>(m), 3});
  return chain;
}

Tensor tape_skin(const Tensor& skinning, const Tensor& weights, const Tensor& points) {
  const Index batch = points.dim(0);
  const Index k = points.dim(1);
  if (weights.rank() != 2 || weights.dim(0) != k || weights.dim(1) != skinning.dim(1)) {
    throw DimensionError("tape_skin: weights must be [points, joints]");
  }
  const Tensor blended = ad::reshape(ad::matmul(weights, skinning), {batch * k, 3, 4});
  const Tensor homogeneous =
      ad::concatenate({ad::reshape(points, {batch * k, 3, 1}), Tensor::full({batch * k, 1, 1}, 1.0)}, 1);
  return ad::reshape(ad::compose(blended, homogeneous), {batch, k, 3});
}

TapeBody tape_forward(const Tensor& quaternions, const Tensor& betas, const ModelTensors& model) {
  if (quaternions.dim(0) != betas.dim(0)) throw DimensionError("tape_forward: batch sizes differ");
  TapeBody body;
  body.rotations = tape_rotations(quaternions);
  body.rest_vertices = tape_shape_vertices(betas, model);
  body.rest_joints = tape_regress_joints(body.rest_vertices, model);
  body.chain = tape_chain(body.rotations, body.rest_joints, model.parents);
  body.joints = body.chain.joints;
  body.vertices = tape_skin(body.chain.skinning, model.skinning_weights, body.rest_vertices);
  return body;
}

}  // namespace sparsebody
