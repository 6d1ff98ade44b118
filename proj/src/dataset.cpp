#include "sparsebody/dataset.hpp"

#include "sparsebody/errors.hpp"
#include "sparsebody/random.hpp"
#include "sparsebody/rotation.hpp"
#include "text_io.hpp"

#include <Eigen/Geometry>

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace sparsebody {
namespace {

constexpr std::uint64_t kSequenceStream = 0x5E9;
constexpr std::uint64_t kDropStream = 0xD7;

using text::number;
using text::read_file;
using text::split;
using text::trim;
using text::write_file;

bool parse_coordinate(const std::string& token, double& out) { return text::parse_number(token, out); }

Eigen::Vector4d slerp(const Eigen::Vector4d& a, const Eigen::Vector4d& b, double t) {
  const Eigen::Quaterniond qa(a[0], a[1], a[2], a[3]), qb(b[0], b[1], b[2], b[3]);
  const Eigen::Quaterniond q = qa.slerp(t, qb).normalized();
  Eigen::Vector4d out(q.w(), q.x(), q.y(), q.z());
  return out[0] < 0 ? Eigen::Vector4d(-out) : out;
}

struct Placement {
  int face = -1;     // -1: vertex placement
  Index vertex = 0;  // used when face < 0
  Eigen::Vector3d bary = Eigen::Vector3d::Zero();
  double offset = 0.0;
};

// Faces whose three corners all lie in the patch.
std::vector<std::vector<int>> patch_faces(const BodyModel& model) {
  std::vector<std::vector<int>> out;
  for (const auto& patch : model.landmarks.patches()) {
    const std::set<Index> inside(patch.vertices.begin(), patch.vertices.end());
    std::vector<int> faces;
    for (Index f = 0; f < model.faces.rows(); ++f) {
      if (inside.count(model.faces(f, 0)) && inside.count(model.faces(f, 1)) && inside.count(model.faces(f, 2))) {
        faces.push_back(static_cast<int>(f));
      }
    }
    out.push_back(std::move(faces));
  }
  return out;
}

Eigen::Vector3d corner(const Points3& v, const Faces& f, int face, int k) { return v.row(f(face, k)).transpose(); }

Eigen::Vector3d face_cross(const Points3& v, const Faces& f, int face) {
  return (corner(v, f, face, 1) - corner(v, f, face, 0)).cross(corner(v, f, face, 2) - corner(v, f, face, 0));
}

Eigen::Vector3d place(const Placement& p, const Points3& v, const Points3& normals, const Faces& f) {
  if (p.face < 0) return v.row(p.vertex).transpose() + p.offset * normals.row(p.vertex).transpose();
  Eigen::Vector3d x = Eigen::Vector3d::Zero();
  for (int k = 0; k < 3; ++k) x += p.bary[k] * corner(v, f, p.face, k);
  return x + p.offset * face_cross(v, f, p.face).normalized();
}

}  // namespace

Points3 Dataset::landmarks(Index f) const {
  return Eigen::Map<const Points3>(coordinates.row(f).data(), landmark_count(), 3);
}

std::vector<std::pair<std::string, std::vector<Index>>> Dataset::sequences() const {
  std::vector<std::pair<std::string, std::vector<Index>>> out;
  std::map<std::string, std::size_t> where;
  for (Index f = 0; f < size(); ++f) {
    const std::string& s = sequence[static_cast<std::size_t>(f)];
    auto it = where.find(s);
    if (it == where.end()) {
      it = where.emplace(s, out.size()).first;
      out.push_back({s, {}});
    }
    out[it->second].second.push_back(f);
  }
  return out;
}

Dataset Dataset::subset(const std::vector<Index>& rows) const {
  Dataset d;
  d.codes = codes;
  d.coordinates = coordinates(rows, Eigen::all);
  d.mask = mask(rows, Eigen::all);
  for (Index r : rows) {
    d.sequence.push_back(sequence[static_cast<std::size_t>(r)]);
    d.frame.push_back(frame[static_cast<std::size_t>(r)]);
    if (!subject.empty()) d.subject.push_back(subject[static_cast<std::size_t>(r)]);
  }
  return d;
}

void Dataset::validate() const {
  const Index n = size(), l = landmark_count();
  if (coordinates.cols() != 3 * l || mask.rows() != n || mask.cols() != l ||
      static_cast<Index>(sequence.size()) != n || static_cast<Index>(frame.size()) != n ||
      (!subject.empty() && static_cast<Index>(subject.size()) != n)) {
    throw DataError("dataset extents disagree");
  }
  for (Index f = 0; f < n; ++f) {
    for (Index i = 0; i < l; ++i) {
      const double m = mask(f, i);
      if (m != 0.0 && m != 1.0) throw DataError("mask entries must be 0 or 1");
      if (m == 0.0 && coordinates.row(f).segment(3 * i, 3).cwiseAbs().maxCoeff() != 0.0) {
        throw DataError("frame " + std::to_string(f) + ": missing landmark " + codes[static_cast<std::size_t>(i)] +
                        " has nonzero coordinates");
      }
      if (!coordinates.row(f).segment(3 * i, 3).allFinite()) throw DataError("non-finite coordinate in frame " + std::to_string(f));
    }
  }
}

std::string format_frame_table(const Dataset& data) {
  std::string out = "sequence,frame";
  const bool subjects = !data.subject.empty();
  if (subjects) out += ",subject";
  for (const auto& c : data.codes) out += "," + c + "_x," + c + "_y," + c + "_z";
  out += '\n';
  for (Index f = 0; f < data.size(); ++f) {
    out += data.sequence[static_cast<std::size_t>(f)] + "," + std::to_string(data.frame[static_cast<std::size_t>(f)]);
    if (subjects) out += "," + data.subject[static_cast<std::size_t>(f)];
    for (Index i = 0; i < data.landmark_count(); ++i) {
      for (int k = 0; k < 3; ++k) out += "," + (data.mask(f, i) != 0.0 ? number(data.coordinates(f, 3 * i + k)) : "NA");
    }
    out += '\n';
  }
  return out;
}

void save_frame_table(const Dataset& data, const std::filesystem::path& path) {
  write_file(path, format_frame_table(data));
}

Dataset parse_frame_table(const std::string& text, const LandmarkDictionary& dictionary) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line)) throw DataError("frame table is empty");
  const auto header = split(trim(line), ',');
  if (header.size() < 2 || trim(header[0]) != "sequence" || trim(header[1]) != "frame") {
    throw DataError("frame table header must start with sequence,frame");
  }
  std::size_t first = 2;
  const bool subjects = header.size() > 2 && trim(header[2]) == "subject";
  if (subjects) first = 3;
  if ((header.size() - first) % 3 != 0) throw DataError("frame table: coordinate columns must come in x,y,z triples");

  Dataset d;
  d.codes = dictionary.codes();
  const Index l = dictionary.size();
  std::vector<Index> column_landmark;  // dictionary index per column triple
  std::vector<std::string> unknown;
  for (std::size_t c = first; c < header.size(); c += 3) {
    const std::string x = trim(header[c]);
    if (x.size() < 3 || x.substr(x.size() - 2) != "_x") throw DataError("frame table: bad column " + x);
    const std::string code = x.substr(0, x.size() - 2);
    if (trim(header[c + 1]) != code + "_y" || trim(header[c + 2]) != code + "_z") {
      throw DataError("frame table: columns of " + code + " must be _x,_y,_z");
    }
    const auto idx = dictionary.find(code);
    if (!idx) {
      unknown.push_back(code);
      column_landmark.push_back(-1);
    } else {
      column_landmark.push_back(*idx);
    }
  }
  if (!unknown.empty()) {
    std::string msg = "unknown landmark codes:";
    for (const auto& u : unknown) msg += " " + u;
    throw DataError(msg);
  }

  std::vector<std::vector<double>> rows;
  std::vector<std::vector<double>> masks;
  Index line_no = 1;
  while (std::getline(ss, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size()) {
      throw DataError("frame table line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " cells, got " + std::to_string(cells.size()));
    }
    d.sequence.push_back(trim(cells[0]));
    long long frame = 0;
    const std::string fr = trim(cells[1]);
    const auto res = std::from_chars(fr.data(), fr.data() + fr.size(), frame);
    if (res.ec != std::errc() || res.ptr != fr.data() + fr.size()) {
      throw DataError("frame table line " + std::to_string(line_no) + ": bad frame index '" + fr + "'");
    }
    d.frame.push_back(frame);
    if (subjects) d.subject.push_back(trim(cells[2]));
    std::vector<double> coords(static_cast<std::size_t>(3 * l), 0.0), mask(static_cast<std::size_t>(l), 0.0);
    for (std::size_t t = 0; t < column_landmark.size(); ++t) {
      const Index i = column_landmark[t];
      double v[3];
      bool any_nan = false, any_na = false;
      for (int k = 0; k < 3; ++k) {
        const std::string& cell = cells[first + 3 * t + static_cast<std::size_t>(k)];
        if (!parse_coordinate(cell, v[k])) {
          throw DataError("frame table line " + std::to_string(line_no) + ": bad coordinate '" + cell + "'");
        }
        if (std::isnan(v[k])) (trim(cell) == "NA" ? any_na : any_nan) = true;
        if (std::isinf(v[k])) any_nan = true;
      }
      if (any_nan) {
        d.warnings.push_back("line " + std::to_string(line_no) + ": non-finite coordinate for " +
                             d.codes[static_cast<std::size_t>(i)] + ", marked missing");
      }
      if (any_nan || any_na) continue;
      mask[static_cast<std::size_t>(i)] = 1.0;
      for (int k = 0; k < 3; ++k) coords[static_cast<std::size_t>(3 * i + k)] = v[k];
    }
    rows.push_back(std::move(coords));
    masks.push_back(std::move(mask));
  }
  const Index n = static_cast<Index>(rows.size());
  d.coordinates.resize(n, 3 * l);
  d.mask.resize(n, l);
  for (Index f = 0; f < n; ++f) {
    d.coordinates.row(f) = Eigen::Map<const Eigen::RowVectorXd>(rows[static_cast<std::size_t>(f)].data(), 3 * l);
    d.mask.row(f) = Eigen::Map<const Eigen::RowVectorXd>(masks[static_cast<std::size_t>(f)].data(), l);
  }
  return d;
}

Dataset load_frame_table(const std::filesystem::path& path, const LandmarkDictionary& dictionary) {
  return parse_frame_table(read_file(path), dictionary);
}

std::map<std::string, double> missing_statistics(const Dataset& data) {
  std::map<std::string, double> out;
  for (const auto& [name, rows] : data.sequences()) {
    double missing = 0.0;
    for (Index f : rows) missing += static_cast<double>(data.landmark_count()) - data.mask.row(f).sum();
    out[name] = missing / static_cast<double>(rows.size());
  }
  return out;
}

LandmarkDictionary load_dictionary(const std::filesystem::path& path) {
  try {
    return LandmarkDictionary::from_text(read_file(path));
  } catch (const ConfigurationError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_dictionary(const LandmarkDictionary& dictionary, const std::filesystem::path& path) {
  write_file(path, dictionary.to_text());
}

PoseShape GroundTruth::pose_shape(Index f) const {
  PoseShape ps;
  ps.quaternions = Eigen::Map<const QuatArray>(quaternions.row(f).data(), quaternions.cols() / 4, 4);
  ps.betas = betas.row(f).transpose();
  return ps;
}

Points3 GroundTruth::vertices(const BodyModel& model, Index f) const {
  Points3 v = full_forward(pose_shape(f), model).vertices;
  v.rowwise() += translation.row(f);
  return v;
}

Points3 GroundTruth::joint_positions(Index f) const {
  return Eigen::Map<const Points3>(joints.row(f).data(), joints.cols() / 3, 3);
}

GroundTruth GroundTruth::subset(const std::vector<Index>& rows) const {
  return {quaternions(rows, Eigen::all), betas(rows, Eigen::all), translation(rows, Eigen::all),
          joints(rows, Eigen::all), rest_landmarks(rows, Eigen::all), offsets(rows, Eigen::all)};
}

Archive GroundTruth::to_archive() const {
  Archive a;
  a.put("quaternions", quaternions);
  a.put("betas", betas);
  a.put("translation", translation);
  a.put("joints", joints);
  a.put("rest_landmarks", rest_landmarks);
  a.put("offsets", offsets);
  return a;
}

GroundTruth GroundTruth::from_archive(const Archive& a) {
  const Index n = a.dims("quaternions").front();
  GroundTruth g{a.matrix("quaternions", n), a.matrix("betas", n),          a.matrix("translation", n),
                a.matrix("joints", n),      a.matrix("rest_landmarks", n), a.matrix("offsets", n)};
  if (g.betas.cols() != kShapeCount || g.translation.cols() != 3 || g.quaternions.cols() % 4 != 0) {
    throw DataError("ground-truth archive has unexpected extents");
  }
  return g;
}

QuatArray sample_pose(const std::vector<EulerBox>& limits, std::mt19937_64& rng) {
  QuatArray q(static_cast<Index>(limits.size()), 4);
  for (std::size_t j = 0; j < limits.size(); ++j) {
    double e[3];
    for (int k = 0; k < 3; ++k) e[k] = std::uniform_real_distribution<double>(limits[j].lower[k], limits[j].upper[k])(rng);
    q.row(static_cast<Index>(j)) = euler_xyz_to_quat(e[0], e[1], e[2]).transpose();
  }
  return q;
}

SynthOutput synth_generate(const BodyModel& model, const SynthConfig& config) {
  validate(model);
  const Index m = model.joint_count(), l = model.landmarks.size(), n = config.frames;
  if (l == 0) throw ConfigurationError("synth: model has no landmark patches");
  if (model.faces.rows() == 0 && (!config.median_only || config.offset_max > 0)) {
    throw ConfigurationError("synth: model has no faces");
  }
  if (static_cast<Index>(config.pose_limits.size()) != m) throw ConfigurationError("synth: pose limits do not match joints");
  if (n <= 0 || config.sequence_length <= 0 || config.keyframe_interval <= 0) {
    throw ConfigurationError("synth: frames, sequence length and keyframe interval must be positive");
  }
  if (config.offset_min < 0 || config.offset_max < config.offset_min) throw ConfigurationError("synth: bad offset range");
  if (config.drop_rate < 0 || config.drop_rate >= 1) throw ConfigurationError("synth: drop rate must be in [0, 1)");
  for (const auto& p : model.landmarks.patches()) {
    if (p.vertices.empty()) throw ConfigurationError("synth: landmark " + p.code + " has an empty patch");
  }
  const auto faces_of = patch_faces(model);

  SynthOutput out;
  Dataset& d = out.data;
  GroundTruth& g = out.truth;
  d.codes = model.landmarks.codes();
  d.coordinates = RowMatrixXd::Zero(n, 3 * l);
  d.mask = RowMatrixXd::Ones(n, l);
  g.quaternions.resize(n, 4 * m);
  g.betas.resize(n, kShapeCount);
  g.translation.resize(n, 3);
  g.joints.resize(n, 3 * m);
  g.rest_landmarks.resize(n, 3 * l);
  g.offsets.resize(n, l);

  const Index sequences = (n + config.sequence_length - 1) / config.sequence_length;
  for (Index s = 0; s < sequences; ++s) {
    auto rng = stream_rng(config.seed, static_cast<std::uint64_t>(s), kSequenceStream);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ShapeVector beta;
    for (Index k = 0; k < kShapeCount; ++k) beta[k] = config.beta_range * (2 * unit(rng) - 1);

    const Points3 rest = shape_body(beta, model).first;
    std::vector<Placement> placement(static_cast<std::size_t>(l));
    for (Index i = 0; i < l; ++i) {
      const auto& patch = model.landmarks[i];
      const auto& faces = faces_of[static_cast<std::size_t>(i)];
      Placement& p = placement[static_cast<std::size_t>(i)];
      p.offset = config.offset_min + (config.offset_max - config.offset_min) * unit(rng);
      if (config.median_only || faces.empty()) {
        p.vertex = config.median_only ? patch.median
                                      : patch.vertices[static_cast<std::size_t>(unit(rng) * static_cast<double>(patch.vertices.size())) % patch.vertices.size()];
        continue;
      }
      std::vector<double> area;
      for (int f : faces) area.push_back(face_cross(rest, model.faces, f).norm());
      p.face = faces[std::discrete_distribution<std::size_t>(area.begin(), area.end())(rng)];
      double r1 = unit(rng), r2 = unit(rng);
      if (r1 + r2 > 1) r1 = 1 - r1, r2 = 1 - r2;
      p.bary = Eigen::Vector3d(1 - r1 - r2, r1, r2);
    }

    const Index first = s * config.sequence_length;
    const Index count = std::min(config.sequence_length, n - first);
    const Index keys = (count - 1) / config.keyframe_interval + 2;
    std::vector<QuatArray> key_pose;
    std::vector<Eigen::RowVector3d> key_translation;
    const double yaw = config.yaw_range * (2 * unit(rng) - 1);
    const Eigen::Vector4d yaw_q = euler_xyz_to_quat(0.0, yaw, 0.0);
    for (Index k = 0; k < keys; ++k) {
      key_pose.push_back(sample_pose(config.pose_limits, rng));
      const double tx = config.translation_range * (2 * unit(rng) - 1);
      const double tz = config.translation_range * (2 * unit(rng) - 1);
      key_translation.emplace_back(tx, 0.0, tz);
    }
    const Points3 rest_normals =
        model.faces.rows() > 0 ? vertex_normals(rest, model.faces) : Points3(Points3::Zero(rest.rows(), 3));

    for (Index t = 0; t < count; ++t) {
      const Index f = first + t;
      const Index k = t / config.keyframe_interval;
      const double a = static_cast<double>(t % config.keyframe_interval) / static_cast<double>(config.keyframe_interval);
      PoseShape ps;
      ps.quaternions.resize(m, 4);
      for (Index j = 0; j < m; ++j) {
        ps.quaternions.row(j) = slerp(key_pose[static_cast<std::size_t>(k)].row(j).transpose(),
                                      key_pose[static_cast<std::size_t>(k + 1)].row(j).transpose(), a)
                                    .transpose();
      }
      Eigen::Vector4d root = quat_multiply<double>(yaw_q, ps.quaternions.row(0).transpose());
      if (root[0] < 0) root = -root;
      ps.quaternions.row(0) = root.transpose();
      ps.betas = beta;
      const Eigen::RowVector3d shift =
          (1 - a) * key_translation[static_cast<std::size_t>(k)] + a * key_translation[static_cast<std::size_t>(k + 1)];

      const PosedBody body = full_forward(ps, model);
      const Points3 normals = model.faces.rows() > 0 ? vertex_normals(body.vertices, model.faces)
                                                     : Points3(Points3::Zero(body.vertices.rows(), 3));
      for (Index i = 0; i < l; ++i) {
        const Placement& p = placement[static_cast<std::size_t>(i)];
        const Eigen::Vector3d posed = place(p, body.vertices, normals, model.faces);
        const Eigen::Vector3d at_rest = place(p, body.rest_vertices, rest_normals, model.faces);
        d.coordinates.row(f).segment(3 * i, 3) = posed.transpose() + shift;
        g.rest_landmarks.row(f).segment(3 * i, 3) = at_rest.transpose();
        g.offsets(f, i) = p.offset;
      }
      g.quaternions.row(f) = ps.quaternions.reshaped<Eigen::RowMajor>().transpose();
      g.betas.row(f) = beta.transpose();
      g.translation.row(f) = shift;
      g.joints.row(f) = (body.joints.rowwise() + shift).reshaped<Eigen::RowMajor>().transpose();

      if (config.drop_rate > 0) {
        auto drop_rng = stream_rng(config.seed, static_cast<std::uint64_t>(f), kDropStream);
        std::bernoulli_distribution drop(config.drop_rate);
        for (Index i = 0; i < l; ++i) {
          if (drop(drop_rng)) {
            d.mask(f, i) = 0.0;
            d.coordinates.row(f).segment(3 * i, 3).setZero();
          }
        }
      }
      char name[32];
      std::snprintf(name, sizeof(name), "seq%04lld", static_cast<long long>(s));
      d.sequence.emplace_back(name);
      d.frame.push_back(t);
    }
  }
  return out;
}

}  // namespace sparsebody
