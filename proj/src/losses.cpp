#include "sparsebody/losses.hpp"

#include "sparsebody/errors.hpp"
#include "sparsebody/random.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace sparsebody {

using ad::Tensor;

namespace {

// Repeats a [m, 4] table over the batch.
Tensor tile(const QuatArray& table, Index batch) {
  ad::Array a(batch * table.size());
  for (Index b = 0; b < batch; ++b) a.segment(b * table.size(), table.size()) = table.reshaped<Eigen::RowMajor>().array();
  return Tensor({batch, table.rows(), 4}, std::move(a));
}

std::string vec4(const Eigen::RowVector4d& v) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g", v[0], v[1], v[2], v[3]);
  return buf;
}

}  // namespace

void QuaternionBounds::validate() const {
  if (lower.rows() != upper.rows()) throw ConfigurationError("quaternion bounds: lower and upper differ in size");
  const Eigen::RowVector4d identity(1, 0, 0, 0);
  for (Index j = 0; j < lower.rows(); ++j) {
    if ((lower.row(j).array() > upper.row(j).array()).any()) {
      throw ConfigurationError("quaternion bounds of joint " + std::to_string(j) + ": lower exceeds upper");
    }
    if ((identity.array() < lower.row(j).array()).any() || (identity.array() > upper.row(j).array()).any()) {
      throw ConfigurationError("quaternion bounds of joint " + std::to_string(j) + " exclude the identity");
    }
  }
}

QuaternionBounds QuaternionBounds::from_config(const KeyValues& kv, Index joints) {
  QuaternionBounds b{QuatArray(joints, 4), QuatArray(joints, 4)};
  for (Index j = 0; j < joints; ++j) {
    const std::string prefix = "bounds." + std::to_string(j) + ".";
    const auto lo = kv.get_doubles(prefix + "lower");
    const auto hi = kv.get_doubles(prefix + "upper");
    if (lo.size() != 4 || hi.size() != 4) throw ConfigurationError(prefix + "lower/upper need 4 values");
    for (int k = 0; k < 4; ++k) b.lower(j, k) = lo[static_cast<std::size_t>(k)], b.upper(j, k) = hi[static_cast<std::size_t>(k)];
  }
  b.validate();
  return b;
}

void QuaternionBounds::write_config(KeyValues& kv) const {
  for (Index j = 0; j < lower.rows(); ++j) {
    kv.set("bounds." + std::to_string(j) + ".lower", vec4(lower.row(j)));
    kv.set("bounds." + std::to_string(j) + ".upper", vec4(upper.row(j)));
  }
}

QuaternionBounds bounds_from_euler(const std::vector<EulerBox>& limits, int samples_per_joint, std::uint64_t seed) {
  const Index m = static_cast<Index>(limits.size());
  QuaternionBounds b{QuatArray(m, 4), QuatArray(m, 4)};
  for (Index j = 0; j < m; ++j) {
    const EulerBox& box = limits[static_cast<std::size_t>(j)];
    Eigen::RowVector4d lo(1, 0, 0, 0), hi(1, 0, 0, 0);
    auto include = [&](double x, double y, double z) {
      const Eigen::RowVector4d q = euler_xyz_to_quat(x, y, z).transpose();
      lo = lo.cwiseMin(q);
      hi = hi.cwiseMax(q);
    };
    for (int corner = 0; corner < 8; ++corner) {
      include(corner & 1 ? box.upper[0] : box.lower[0], corner & 2 ? box.upper[1] : box.lower[1],
              corner & 4 ? box.upper[2] : box.lower[2]);
    }
    auto rng = stream_rng(seed, static_cast<std::uint64_t>(j), 0xB0);
    std::uniform_real_distribution<double> ux(box.lower[0], box.upper[0]), uy(box.lower[1], box.upper[1]),
        uz(box.lower[2], box.upper[2]);
    for (int s = 0; s < samples_per_joint; ++s) {
      const double x = ux(rng), y = uy(rng), z = uz(rng);
      include(x, y, z);
    }
    b.lower.row(j) = lo;
    b.upper.row(j) = hi;
  }
  b.validate();
  return b;
}

LossWeights LossWeights::from_config(const KeyValues& kv) {
  LossWeights w;
  w.dae = kv.get_double("lambda.dae", w.dae);
  w.beta = kv.get_double("lambda.beta", w.beta);
  w.phi = kv.get_double("lambda.phi", w.phi);
  w.joints = kv.get_double("lambda.joints", w.joints);
  w.surface = kv.get_double("lambda.surface", w.surface);
  w.unpose = kv.get_double("lambda.unpose", w.unpose);
  for (double v : {w.dae, w.beta, w.phi, w.joints, w.surface, w.unpose}) {
    if (!(v >= 0.0)) throw ConfigurationError("loss weights must be non-negative");
  }
  return w;
}

Tensor loss_dae(const Tensor& landmarks, const Tensor& reconstruction, const Tensor& mask) {
  return ad::mean(ad::mul(mask, ad::abs(ad::sub(landmarks, reconstruction))));
}

Tensor loss_phi(const Tensor& quaternions, const QuaternionBounds& bounds) {
  const Index batch = quaternions.dim(0);
  if (quaternions.dim(1) != bounds.lower.rows()) throw DimensionError("loss_phi: bounds do not match joint count");
  const Tensor below = ad::relu(ad::sub(tile(bounds.lower, batch), quaternions));
  const Tensor above = ad::relu(ad::sub(quaternions, tile(bounds.upper, batch)));
  return ad::mean(ad::add(below, above));
}

Tensor loss_beta(const Tensor& betas) {
  const Tensor a = ad::abs(betas);
  return ad::mean(ad::add(ad::relu(ad::add_bias(a, Tensor::full({betas.dim(-1)}, -5.0))), a));
}

Tensor loss_joints(const Tensor& attention_joints, const Tensor& output_joints) {
  return ad::mean(ad::abs(ad::sub(output_joints, attention_joints.detach())));
}

std::vector<std::vector<Index>> patch_lists(const LandmarkDictionary& dictionary, bool hard) {
  std::vector<std::vector<Index>> out;
  for (const auto& p : dictionary.patches()) out.push_back(hard ? std::vector<Index>{p.median} : p.vertices);
  return out;
}

Tensor loss_surface(const Tensor& landmarks, const Tensor& vertices, const std::vector<std::vector<Index>>& patches,
                    SurfaceAssignment assignment) {
  const Index batch = landmarks.dim(0);
  const Index l = landmarks.dim(1);
  const Index p = vertices.dim(1);
  if (static_cast<Index>(patches.size()) != l) throw DimensionError("loss_surface: one patch per landmark required");
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (patches[i].empty()) throw ConfigurationError("loss_surface: landmark " + std::to_string(i) + " has no patch");
  }

  if (assignment == SurfaceAssignment::kPerCoordinate) {
    std::vector<Index> li, vi;
    for (Index i = 0; i < l; ++i) {
      for (Index v : patches[static_cast<std::size_t>(i)]) li.push_back(i), vi.push_back(v);
    }
    const Index s = static_cast<Index>(li.size());
    const Tensor diff = ad::abs(ad::sub(ad::gather(landmarks, 1, li), ad::gather(vertices, 1, vi)));
    std::vector<std::vector<Index>> sets;
    sets.reserve(static_cast<std::size_t>(batch * l * 3));
    for (Index b = 0; b < batch; ++b) {
      Index start = 0;
      for (Index i = 0; i < l; ++i) {
        const Index n = static_cast<Index>(patches[static_cast<std::size_t>(i)].size());
        for (Index c = 0; c < 3; ++c) {
          std::vector<Index> set(static_cast<std::size_t>(n));
          for (Index k = 0; k < n; ++k) set[static_cast<std::size_t>(k)] = ((b * s) + start + k) * 3 + c;
          sets.push_back(std::move(set));
        }
        start += n;
      }
    }
    return ad::mean(ad::min_over_sets(diff, sets));
  }

  const auto& L = landmarks.data();
  const auto& V = vertices.data();
  std::vector<Index> selected(static_cast<std::size_t>(batch * l));
  bool tie = false;
  for (Index b = 0; b < batch; ++b) {
    for (Index i = 0; i < l; ++i) {
      const Eigen::Vector3d x = L.segment((b * l + i) * 3, 3).matrix();
      double best = std::numeric_limits<double>::infinity(), second = best;
      Index arg = -1;
      for (Index v : patches[static_cast<std::size_t>(i)]) {
        const double d = (V.segment((b * p + v) * 3, 3).matrix() - x).squaredNorm();
        if (d < best) {
          second = best, best = d, arg = v;
        } else if (d < second) {
          second = d;
        }
      }
      tie = tie || (std::isfinite(second) && second - best <= 1e-12 * std::max(1.0, best));
      selected[static_cast<std::size_t>(b * l + i)] = b * p + arg;
    }
  }
  if (tie) ad::note_nondifferentiable(vertices, ad::Primitive::kMinOverSets);
  const Tensor chosen = ad::reshape(ad::gather(ad::reshape(vertices, {batch * p, 3}), 0, selected), {batch, l, 3});
  return ad::mean(ad::abs(ad::sub(landmarks, chosen)));
}

UnposeTerms loss_unpose(const Tensor& rotations, const Tensor& attention_joints, const Tensor& landmarks,
                        const Tensor& rest_joints, const Tensor& rest_vertices, const CorrectionTensors& correction,
                        const std::vector<int>& parents, const std::vector<std::vector<Index>>& patches) {
  const TapeUnpose unpose = tape_unpose_joints(rotations, attention_joints, parents);
  UnposeTerms t;
  t.joints = ad::mean(ad::abs(ad::sub(unpose.rest_joints, rest_joints)));
  const Tensor unposed = tape_unpose_landmarks_corrected(rotations, landmarks, unpose, correction, parents);
  t.landmarks = loss_surface(unposed, rest_vertices, patches);
  t.total = ad::add(t.joints, t.landmarks);
  return t;
}

Tensor combined_loss(LossStage stage, const LossComponents& c, const LossWeights& w) {
  const std::pair<const char*, const Tensor*> named[] = {{"dae", &c.dae},         {"beta", &c.beta},
                                                         {"phi", &c.phi},         {"joints", &c.joints},
                                                         {"surface", &c.surface}, {"unpose", &c.unpose}};
  for (const auto& [name, t] : named) {
    if (stage == LossStage::kL2 && std::string_view(name) == "dae") continue;
    if (!std::isfinite(t->item())) throw NumericError(std::string("loss component ") + name + " is not finite");
  }
  Tensor total = ad::add(ad::scale(c.beta, w.beta), ad::scale(c.phi, w.phi));
  total = ad::add(total, ad::scale(c.joints, w.joints));
  total = ad::add(total, ad::scale(c.surface, w.surface));
  total = ad::add(total, ad::scale(c.unpose, w.unpose));
  if (stage == LossStage::kL1) total = ad::add(ad::scale(c.dae, w.dae), total);
  return total;
}

}  // namespace sparsebody
