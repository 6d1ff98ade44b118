#pragma once

#include "sparsebody/dataset.hpp"
#include "sparsebody/inference.hpp"
#include "sparsebody/toy_model.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>

namespace sparsebody {

/// Mean Euclidean distance between corresponding rows. Throws DimensionError
/// on a shape mismatch or empty sets.
double point_set_error(const Points3& predicted, const Points3& truth);

/// Closest point on triangle (a, b, c) to p.
Eigen::Vector3d closest_point_on_triangle(const Eigen::Vector3d& p, const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                                          const Eigen::Vector3d& c);

/// Exact closest-point queries against a triangle mesh, or against its
/// vertices when it has no faces.
class SurfaceQuery {
 public:
  explicit SurfaceQuery(const Mesh& mesh);
  Eigen::Vector3d closest(const Eigen::Vector3d& p) const;

 private:
  Mesh mesh_;
  Points3 centers_;
  Eigen::VectorXd radii_;
};

struct ScanOptions {
  Index samples = 10000;
  int alignment_iterations = 10;
};

/// Mean distance from `samples` scan points to the body after a
/// translation-only alignment (centroid start, then nearest-point mean
/// offsets). Scan points are drawn by area on a mesh and uniformly from a
/// point cloud; distances go to the body's surface (to its vertices when it
/// has no faces). Throws DataError on empty inputs.
double scan_to_model(const Mesh& scan, const Mesh& body, std::mt19937_64& rng, const ScanOptions& options = {});

/// `samples` points drawn uniformly by area (uniformly over points when the
/// mesh has no faces).
Points3 sample_surface(const Mesh& mesh, Index samples, std::mt19937_64& rng);

/// Moves every vertex `offset` along its area-weighted normal.
Mesh inflate_mesh(const Mesh& mesh, double offset);

struct PointErrors {
  double joints_in = 0.0;
  double joints_out = 0.0;
  double surface = 0.0;
  Index frames = 0;
};

/// Mean errors in meters; report text and table use millimeters.
struct EvalReport {
  PointErrors overall;
  std::map<std::string, PointErrors> per_sequence;
  std::optional<double> scan_to_model;
  std::string fingerprint;

  std::string text() const;
  /// "scope,frames,j_in_mm,j_out_mm,t_out_mm,scan_to_model_mm".
  std::string table() const;
};

/// Compares row f of `predicted` with row f of `truth`.
EvalReport evaluate(const Prediction& predicted, const GroundTruth& truth, const BodyModel& model,
                    const std::string& fingerprint = "");

/// 16 hex digits of the FNV-1a hash of `text`.
std::string fingerprint(const std::string& text);

/// ASCII OBJ: "v x y z" lines then 1-based "f a b c" lines.
void save_obj(const Mesh& mesh, const std::filesystem::path& path);
Mesh load_obj(const std::filesystem::path& path);

}  // namespace sparsebody
