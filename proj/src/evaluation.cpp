#include "sparsebody/evaluation.hpp"

#include "sparsebody/errors.hpp"
#include "text_io.hpp"

#include <cstdio>
#include <limits>

namespace sparsebody {

double point_set_error(const Points3& predicted, const Points3& truth) {
  if (predicted.rows() != truth.rows() || predicted.rows() == 0) {
    throw DimensionError("point sets must be non-empty and the same size, got " + std::to_string(predicted.rows()) +
                         " and " + std::to_string(truth.rows()));
  }
  return (predicted - truth).rowwise().norm().mean();
}

Eigen::Vector3d closest_point_on_triangle(const Eigen::Vector3d& p, const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                                          const Eigen::Vector3d& c) {
  const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + d1 / (d1 - d3) * ab;
  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + d2 / (d2 - d6) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && d4 - d3 >= 0 && d5 - d6 >= 0) return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

SurfaceQuery::SurfaceQuery(const Mesh& mesh) : mesh_(mesh) {
  if (mesh.vertices.rows() == 0) throw DataError("surface query on an empty mesh");
  const Index nf = mesh.faces.rows();
  centers_.resize(nf, 3);
  radii_.resize(nf);
  for (Index f = 0; f < nf; ++f) {
    Eigen::RowVector3d c = Eigen::RowVector3d::Zero();
    for (int k = 0; k < 3; ++k) c += mesh.vertices.row(mesh.faces(f, k));
    c /= 3.0;
    double r = 0.0;
    for (int k = 0; k < 3; ++k) r = std::max(r, (mesh.vertices.row(mesh.faces(f, k)) - c).norm());
    centers_.row(f) = c;
    radii_[f] = r;
  }
}

Eigen::Vector3d SurfaceQuery::closest(const Eigen::Vector3d& p) const {
  double best = std::numeric_limits<double>::infinity();
  Eigen::Vector3d out = Eigen::Vector3d::Zero();
  if (mesh_.faces.rows() == 0) {
    Index i = 0;
    (mesh_.vertices.rowwise() - p.transpose()).rowwise().squaredNorm().minCoeff(&i);
    return mesh_.vertices.row(i).transpose();
  }
  for (Index f = 0; f < mesh_.faces.rows(); ++f) {
    // Skip triangles whose bounding sphere is farther than the best hit.
    const double lower = (centers_.row(f).transpose() - p).norm() - radii_[f];
    if (lower > 0 && lower * lower >= best) continue;
    const Eigen::Vector3d q =
        closest_point_on_triangle(p, mesh_.vertices.row(mesh_.faces(f, 0)).transpose(),
                                  mesh_.vertices.row(mesh_.faces(f, 1)).transpose(),
                                  mesh_.vertices.row(mesh_.faces(f, 2)).transpose());
    const double d = (q - p).squaredNorm();
    if (d < best) {
      best = d;
      out = q;
    }
  }
  return out;
}

Points3 sample_surface(const Mesh& mesh, Index samples, std::mt19937_64& rng) {
  if (mesh.vertices.rows() == 0) throw DataError("cannot sample an empty mesh");
  Points3 out(samples, 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (mesh.faces.rows() == 0) {
    std::uniform_int_distribution<Index> pick(0, mesh.vertices.rows() - 1);
    for (Index s = 0; s < samples; ++s) out.row(s) = mesh.vertices.row(pick(rng));
    return out;
  }
  std::vector<double> areas(static_cast<std::size_t>(mesh.faces.rows()));
  for (Index f = 0; f < mesh.faces.rows(); ++f) {
    const Eigen::RowVector3d a = mesh.vertices.row(mesh.faces(f, 0));
    areas[static_cast<std::size_t>(f)] =
        0.5 * (mesh.vertices.row(mesh.faces(f, 1)) - a).cross(mesh.vertices.row(mesh.faces(f, 2)) - a).norm();
  }
  std::discrete_distribution<Index> face(areas.begin(), areas.end());
  for (Index s = 0; s < samples; ++s) {
    const Index f = face(rng);
    double r1 = u(rng), r2 = u(rng);
    if (r1 + r2 > 1) r1 = 1 - r1, r2 = 1 - r2;
    const Eigen::RowVector3d a = mesh.vertices.row(mesh.faces(f, 0));
    out.row(s) = a + r1 * (mesh.vertices.row(mesh.faces(f, 1)) - a) + r2 * (mesh.vertices.row(mesh.faces(f, 2)) - a);
  }
  return out;
}

Mesh inflate_mesh(const Mesh& mesh, double offset) {
  Mesh out = mesh;
  out.vertices += offset * vertex_normals(mesh.vertices, mesh.faces);
  return out;
}

double scan_to_model(const Mesh& scan, const Mesh& body, std::mt19937_64& rng, const ScanOptions& options) {
  if (scan.vertices.rows() == 0 || body.vertices.rows() == 0) throw DataError("scan_to_model needs non-empty inputs");
  if (options.samples < 1) throw ConfigurationError("scan_to_model needs at least one sample");
  const Points3 points = sample_surface(scan, options.samples, rng);
  const SurfaceQuery query(body);
  Eigen::RowVector3d shift = body.vertices.colwise().mean() - scan.vertices.colwise().mean();
  Points3 nearest(points.rows(), 3);
  auto match = [&] {
    for (Index s = 0; s < points.rows(); ++s) nearest.row(s) = query.closest((points.row(s) + shift).transpose()).transpose();
  };
  for (int it = 0; it < options.alignment_iterations; ++it) {
    match();
    shift += (nearest - (points.rowwise() + shift)).colwise().mean();
  }
  match();
  return (nearest - (points.rowwise() + shift)).rowwise().norm().mean();
}

namespace {

void accumulate(PointErrors& e, double jin, double jout, double surface) {
  e.joints_in += jin;
  e.joints_out += jout;
  e.surface += surface;
  ++e.frames;
}

void finish(PointErrors& e) {
  if (e.frames == 0) return;
  const double n = static_cast<double>(e.frames);
  e.joints_in /= n;
  e.joints_out /= n;
  e.surface /= n;
}

std::string mm(double meters) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", 1000.0 * meters);
  return buf;
}

}  // namespace

EvalReport evaluate(const Prediction& predicted, const GroundTruth& truth, const BodyModel& model,
                    const std::string& fingerprint) {
  if (predicted.size() != truth.size()) {
    throw DataError("prediction has " + std::to_string(predicted.size()) + " frames, ground truth " +
                    std::to_string(truth.size()));
  }
  if (predicted.size() == 0) throw DataError("nothing to evaluate");
  if (predicted.joint_count() != model.joint_count()) throw DataError("prediction does not match the body model");
  EvalReport report;
  report.fingerprint = fingerprint;
  for (Index f = 0; f < predicted.size(); ++f) {
    const Points3 gt_joints = truth.joint_positions(f);
    const PosedBody body = full_forward(predicted.pose_shape(f), model);
    const Points3 joints = body.joints.rowwise() + predicted.translation.row(f);
    const Points3 vertices = body.vertices.rowwise() + predicted.translation.row(f);
    const double jin = point_set_error(predicted.attention_joints(f), gt_joints);
    const double jout = point_set_error(joints, gt_joints);
    const double surface = point_set_error(vertices, truth.vertices(model, f));
    accumulate(report.overall, jin, jout, surface);
    accumulate(report.per_sequence[predicted.sequence[static_cast<std::size_t>(f)]], jin, jout, surface);
  }
  finish(report.overall);
  for (auto& [name, e] : report.per_sequence) finish(e);
  return report;
}

std::string EvalReport::text() const {
  std::string s;
  s += "frames          " + std::to_string(overall.frames) + "\n";
  s += "J_in error      " + mm(overall.joints_in) + " mm\n";
  s += "J_out error     " + mm(overall.joints_out) + " mm\n";
  s += "T_out error     " + mm(overall.surface) + " mm\n";
  if (scan_to_model) s += "scan to model   " + mm(*scan_to_model) + " mm\n";
  if (!fingerprint.empty()) s += "config          " + fingerprint + "\n";
  if (per_sequence.size() > 1) {
    s += "per sequence (J_in / J_out / T_out, mm)\n";
    for (const auto& [name, e] : per_sequence) {
      s += "  " + name + "  " + mm(e.joints_in) + " / " + mm(e.joints_out) + " / " + mm(e.surface) + "\n";
    }
  }
  return s;
}

std::string EvalReport::table() const {
  std::string s = "scope,frames,j_in_mm,j_out_mm,t_out_mm,scan_to_model_mm\n";
  const std::string scan = scan_to_model ? mm(*scan_to_model) : "NA";
  s += "all," + std::to_string(overall.frames) + "," + mm(overall.joints_in) + "," + mm(overall.joints_out) + "," +
       mm(overall.surface) + "," + scan + "\n";
  for (const auto& [name, e] : per_sequence) {
    s += name + "," + std::to_string(e.frames) + "," + mm(e.joints_in) + "," + mm(e.joints_out) + "," + mm(e.surface) +
         ",NA\n";
  }
  return s;
}

std::string fingerprint(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_obj(const Mesh& mesh, const std::filesystem::path& path) {
  std::string s;
  for (Index v = 0; v < mesh.vertices.rows(); ++v) {
    s += "v " + text::number(mesh.vertices(v, 0)) + " " + text::number(mesh.vertices(v, 1)) + " " +
         text::number(mesh.vertices(v, 2)) + "\n";
  }
  for (Index f = 0; f < mesh.faces.rows(); ++f) {
    s += "f " + std::to_string(mesh.faces(f, 0) + 1) + " " + std::to_string(mesh.faces(f, 1) + 1) + " " +
         std::to_string(mesh.faces(f, 2) + 1) + "\n";
  }
  text::write_file(path, s);
}

Mesh load_obj(const std::filesystem::path& path) {
  std::stringstream in(text::read_file(path));
  std::vector<Eigen::RowVector3d> vertices;
  std::vector<Eigen::RowVector3i> faces;
  std::string line;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto where = path.string() + ":" + std::to_string(lineno);
    std::stringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      std::string t[3];
      Eigen::RowVector3d v;
      ls >> t[0] >> t[1] >> t[2];
      for (int k = 0; k < 3; ++k) {
        if (!text::parse_number(t[k], v[k]) || !std::isfinite(v[k])) throw DataError(where + ": bad vertex");
      }
      vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string t;
      while (ls >> t) {
        const int i = std::atoi(t.substr(0, t.find('/')).c_str());
        if (i == 0) throw DataError(where + ": bad face index");
        idx.push_back(i > 0 ? i - 1 : static_cast<int>(vertices.size()) + i);
      }
      if (idx.size() < 3) throw DataError(where + ": face with fewer than 3 vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) faces.emplace_back(idx[0], idx[k], idx[k + 1]);
    }
  }
  Mesh mesh;
  mesh.vertices.resize(static_cast<Index>(vertices.size()), 3);
  for (std::size_t i = 0; i < vertices.size(); ++i) mesh.vertices.row(static_cast<Index>(i)) = vertices[i];
  mesh.faces.resize(static_cast<Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      if (faces[i][k] < 0 || faces[i][k] >= static_cast<int>(vertices.size())) {
        throw DataError(path.string() + ": face index out of range");
      }
    }
    mesh.faces.row(static_cast<Index>(i)) = faces[i];
  }
  return mesh;
}

}  // namespace sparsebody
