#include "sparsebody/inference.hpp"

#include "sparsebody/errors.hpp"
#include "sparsebody/rotation.hpp"
#include "text_io.hpp"

#include <map>

namespace sparsebody {

PoseShape Prediction::pose_shape(Index f) const {
  PoseShape ps;
  ps.quaternions = Eigen::Map<const QuatArray>(quaternions.row(f).data(), joint_count(), 4);
  ps.betas = betas.row(f).transpose();
  return ps;
}

Points3 Prediction::vertices(const BodyModel& model, Index f) const {
  return full_forward(pose_shape(f), model).vertices.rowwise() + translation.row(f);
}

Points3 Prediction::joints_out(const BodyModel& model, Index f) const {
  return full_forward(pose_shape(f), model).joints.rowwise() + translation.row(f);
}

Points3 Prediction::attention_joints(Index f) const {
  return Eigen::Map<const Points3>(joints_in.row(f).data(), joint_count(), 3);
}

Prediction Prediction::subset(const std::vector<Index>& rows) const {
  Prediction out;
  for (Index r : rows) {
    out.sequence.push_back(sequence.at(static_cast<std::size_t>(r)));
    out.frame.push_back(frame.at(static_cast<std::size_t>(r)));
  }
  out.quaternions = quaternions(rows, Eigen::all);
  out.betas = betas(rows, Eigen::all);
  out.translation = translation(rows, Eigen::all);
  out.joints_in = joints_in(rows, Eigen::all);
  return out;
}

Prediction predict(const NetworkParams& params, const Dataset& data, const BodyModel& model, Preprocessing mode,
                   Index batch_size) {
  if (params.psi.empty()) throw ConfigurationError("network has no regressor");
  if (params.shape.landmarks != data.landmark_count() || params.shape.joints != model.joint_count()) {
    throw ConfigurationError("network sizes do not match the data and model");
  }
  const Index n = data.size(), m = model.joint_count();
  const Preprocessed frames = preprocess(data, mode, procrustes_reference(model));
  Prediction out;
  out.sequence = data.sequence;
  out.frame = data.frame;
  out.quaternions.resize(n, 4 * m);
  out.betas.resize(n, kShapeCount);
  out.translation.resize(n, 3);
  out.joints_in.resize(n, 3 * m);
  const Index last = static_cast<Index>(params.psi.size()) - 1;
  for (Index start = 0; start < n; start += batch_size) {
    const Index b = std::min(batch_size, n - start);
    const FrameBatch batch = make_batch(frames.coordinates.middleRows(start, b), frames.mask.middleRows(start, b));
    const PipelineOutput p = pipeline_forward(params, batch.landmarks, batch.mask, last, DropoutContext{});
    const ad::Array& q = p.stages.back().quaternions.data();
    const ad::Array& beta = p.stages.back().betas.data();
    const ad::Array& j = p.attention.joints.data();
    for (Index r = 0; r < b; ++r) {
      const Index f = start + r;
      const RigidTransform& t = frames.transforms[static_cast<std::size_t>(f)];
      PoseShape ps;
      ps.quaternions = Eigen::Map<const QuatArray>(q.data() + r * m * 4, m, 4);
      ps.betas = beta.segment(r * kShapeCount, kShapeCount).matrix();
      ps.normalize();
      const Eigen::Vector4d root = ps.quaternions.row(0).transpose();
      Eigen::Vector4d world_root = quat_multiply<double>(rotmat_to_quat<double>(t.rotation.transpose()), root);
      if (world_root[0] < 0) world_root = -world_root;
      ps.quaternions.row(0) = world_root.transpose();

      const Points3 j_net = Eigen::Map<const Points3>(j.data() + r * m * 3, m, 3);
      const Points3 j_world = t.invert(j_net);
      const Eigen::Vector3d rest_root = shape_body(ps.betas, model).second.row(0).transpose();
      const Eigen::Vector3d c = j_net.row(0).transpose();
      out.translation.row(f) = (t.rotation.transpose() * (c - t.translation) - rest_root).transpose();
      out.quaternions.row(f) = ps.quaternions.reshaped<Eigen::RowMajor>().transpose();
      out.betas.row(f) = ps.betas.transpose();
      out.joints_in.row(f) = j_world.reshaped<Eigen::RowMajor>().transpose();
    }
  }
  return out;
}

std::string format_predictions(const Prediction& p) {
  const Index m = p.joint_count();
  std::string s = "sequence,frame";
  for (Index j = 0; j < m; ++j) {
    for (const char* c : {"qw", "qx", "qy", "qz"}) s += ",j" + std::to_string(j) + "_" + c;
  }
  for (Index k = 0; k < kShapeCount; ++k) s += ",beta" + std::to_string(k);
  s += ",tx,ty,tz";
  for (Index j = 0; j < m; ++j) {
    for (const char* c : {"jx", "jy", "jz"}) s += ",j" + std::to_string(j) + "_" + c;
  }
  s += "\n";
  for (Index f = 0; f < p.size(); ++f) {
    s += p.sequence[static_cast<std::size_t>(f)] + "," + std::to_string(p.frame[static_cast<std::size_t>(f)]);
    for (const RowMatrixXd* block : {&p.quaternions, &p.betas, &p.translation, &p.joints_in}) {
      for (Index c = 0; c < block->cols(); ++c) s += "," + text::number((*block)(f, c));
    }
    s += "\n";
  }
  return s;
}

Prediction parse_predictions(const std::string& table) {
  std::stringstream in(table);
  std::string line;
  if (!std::getline(in, line)) throw DataError("prediction table is empty");
  const auto header = text::split(text::trim(line), ',');
  Index m = 0;
  for (const auto& h : header) m += h.size() > 3 && h.compare(h.size() - 3, 3, "_qw") == 0;
  const std::size_t width = 2 + static_cast<std::size_t>(4 * m + kShapeCount + 3 + 3 * m);
  if (m == 0 || header.size() != width || header[0] != "sequence" || header[1] != "frame") {
    throw DataError("prediction table header does not have the expected columns");
  }
  std::vector<std::vector<double>> rows;
  Prediction p;
  Index lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(text::trim(line), ',');
    if (cells.size() != width) throw DataError("prediction table line " + std::to_string(lineno) + ": wrong column count");
    p.sequence.push_back(cells[0]);
    char* end = nullptr;
    p.frame.push_back(std::strtoll(cells[1].c_str(), &end, 10));
    if (end != cells[1].c_str() + cells[1].size()) {
      throw DataError("prediction table line " + std::to_string(lineno) + ": bad frame index");
    }
    std::vector<double> values(width - 2);
    for (std::size_t c = 2; c < width; ++c) {
      if (!text::parse_number(cells[c], values[c - 2]) || !std::isfinite(values[c - 2])) {
        throw DataError("prediction table line " + std::to_string(lineno) + ": bad value '" + cells[c] + "'");
      }
    }
    rows.push_back(std::move(values));
  }
  const Index n = static_cast<Index>(rows.size());
  p.quaternions.resize(n, 4 * m);
  p.betas.resize(n, kShapeCount);
  p.translation.resize(n, 3);
  p.joints_in.resize(n, 3 * m);
  for (Index f = 0; f < n; ++f) {
    Index c = 0;
    for (RowMatrixXd* block : {&p.quaternions, &p.betas, &p.translation, &p.joints_in}) {
      for (Index k = 0; k < block->cols(); ++k) (*block)(f, k) = rows[static_cast<std::size_t>(f)][static_cast<std::size_t>(c++)];
    }
  }
  return p;
}

void save_predictions(const Prediction& p, const std::filesystem::path& path) {
  text::write_file(path, format_predictions(p));
}

Prediction load_predictions(const std::filesystem::path& path) { return parse_predictions(text::read_file(path)); }

std::vector<PoseShape> temporal_smooth(const std::vector<PoseShape>& frames, double threshold, bool jitter) {
  std::vector<PoseShape> out = frames;
  if (frames.empty()) return out;
  ShapeVector mean = ShapeVector::Zero();
  for (const auto& f : frames) mean += f.betas;
  mean /= static_cast<double>(frames.size());
  for (auto& f : out) f.betas = mean;
  if (jitter && frames.size() >= 3) {
    for (std::size_t t = 1; t + 1 < frames.size(); ++t) {
      const QuatArray& prev = frames[t - 1].quaternions;
      const QuatArray& next = frames[t + 1].quaternions;
      const QuatArray& cur = frames[t].quaternions;
      for (Index j = 0; j < cur.rows(); ++j) {
        for (Index k = 0; k < 4; ++k) {
          const double mid = 0.5 * (prev(j, k) + next(j, k));
          if (std::abs(prev(j, k) - next(j, k)) < threshold && std::abs(cur(j, k) - mid) > threshold) {
            out[t].quaternions(j, k) = mid;
          }
        }
      }
    }
  }
  for (auto& f : out) f.normalize();
  return out;
}

Prediction smooth_predictions(const Prediction& p, const BodyModel& model, double threshold, bool jitter) {
  Prediction out = p;
  std::map<std::string, std::vector<Index>> groups;
  for (Index f = 0; f < p.size(); ++f) groups[p.sequence[static_cast<std::size_t>(f)]].push_back(f);
  for (auto& [name, rows] : groups) {
    std::sort(rows.begin(), rows.end(),
              [&](Index a, Index b) { return p.frame[static_cast<std::size_t>(a)] < p.frame[static_cast<std::size_t>(b)]; });
    std::vector<PoseShape> seq;
    for (Index f : rows) seq.push_back(p.pose_shape(f));
    const auto smoothed = temporal_smooth(seq, threshold, jitter);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const Index f = rows[k];
      const Eigen::RowVector3d old_root = shape_body(seq[k].betas, model).second.row(0);
      const Eigen::RowVector3d new_root = shape_body(smoothed[k].betas, model).second.row(0);
      out.quaternions.row(f) = smoothed[k].quaternions.reshaped<Eigen::RowMajor>().transpose();
      out.betas.row(f) = smoothed[k].betas.transpose();
      out.translation.row(f) += old_root - new_root;
    }
  }
  return out;
}

}  // namespace sparsebody
