#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace sparsebody {

using Index = Eigen::Index;

/// Vertex patch a landmark may attach to. `vertices` always contains `median`.
struct LandmarkPatch {
  std::string code;
  Index median = 0;
  std::vector<Index> vertices;
};

/// Ordered landmark codes with their patches; the order fixes the landmark
/// (column) order everywhere else.
class LandmarkDictionary {
 public:
  LandmarkDictionary() = default;
  /// Throws ConfigurationError on duplicate codes, empty patches or a median
  /// that is not part of its patch.
  explicit LandmarkDictionary(std::vector<LandmarkPatch> patches);

  Index size() const { return static_cast<Index>(patches_.size()); }
  bool empty() const { return patches_.empty(); }
  const LandmarkPatch& operator[](Index i) const { return patches_.at(static_cast<std::size_t>(i)); }
  const std::vector<LandmarkPatch>& patches() const { return patches_; }

  std::optional<Index> find(const std::string& code) const;
  /// Throws LookupError for unknown codes.
  Index index_of(const std::string& code) const;

  std::vector<std::string> codes() const;
  std::vector<Index> medians() const;
  /// Same codes, each patch reduced to its median vertex.
  LandmarkDictionary hard_assignment() const;

  /// Dictionary file: one line per code, "CODE: median; i1,i2,...".
  std::string to_text() const;
  static LandmarkDictionary from_text(const std::string& text);

  /// Model-archive table: "CODE: i0,i1,..." with i0 the median.
  std::string to_patch_table() const;
  static LandmarkDictionary from_patch_table(const std::string& text);

  /// Throws ConfigurationError if any vertex index is >= vertex_count.
  void check_vertex_range(Index vertex_count) const;

 private:
  std::vector<LandmarkPatch> patches_;
};

}  // namespace sparsebody
