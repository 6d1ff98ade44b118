#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace sparsebody {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A file of named arrays: 64-bit little-endian floats, 64-bit integers, or
/// text. Used for body models, checkpoints and ground-truth sidecars.
///
/// Layout: "SBARCHV1", u32 entry count, then per entry
///   u32 name length, name bytes, u8 kind (0 f64, 1 i64, 2 text),
///   u32 rank, u64 extents[rank], payload (u64 byte count first for text).
class Archive {
 public:
  struct Entry {
    std::vector<std::int64_t> dims;
    std::variant<std::vector<double>, std::vector<std::int64_t>, std::string> payload;
  };

  void put(const std::string& name, std::vector<std::int64_t> dims, std::vector<double> values);
  void put(const std::string& name, const Eigen::Ref<const RowMatrixXd>& m);
  void put_ints(const std::string& name, std::vector<std::int64_t> dims, std::vector<std::int64_t> values);
  void put_text(const std::string& name, std::string text);

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  const Entry& at(const std::string& name) const;
  const std::vector<std::int64_t>& dims(const std::string& name) const { return at(name).dims; }

  /// Throws DataError if the entry is missing or of another kind.
  const std::vector<double>& doubles(const std::string& name) const;
  const std::vector<std::int64_t>& ints(const std::string& name) const;
  const std::string& text(const std::string& name) const;
  /// Float entry viewed as rows x (size / rows).
  RowMatrixXd matrix(const std::string& name, Eigen::Index rows) const;

  std::vector<std::string> names() const;

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace sparsebody
