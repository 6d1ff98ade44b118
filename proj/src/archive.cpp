#include "sparsebody/archive.hpp"

#include "sparsebody/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace sparsebody {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'B', 'A', 'R', 'C', 'H', 'V', '1'};

std::int64_t product(const std::vector<std::int64_t>& dims) {
  std::int64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated archive " + path);
  return v;
}

}  // namespace

void Archive::put(const std::string& name, std::vector<std::int64_t> dims, std::vector<double> values) {
  if (product(dims) != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("archive entry " + name + ": extents do not match value count");
  }
  entries_[name] = Entry{std::move(dims), std::move(values)};
}

void Archive::put(const std::string& name, const Eigen::Ref<const RowMatrixXd>& m) {
  std::vector<double> values(static_cast<std::size_t>(m.size()));
  Eigen::Map<RowMatrixXd>(values.data(), m.rows(), m.cols()) = m;
  put(name, {m.rows(), m.cols()}, std::move(values));
}

void Archive::put_ints(const std::string& name, std::vector<std::int64_t> dims, std::vector<std::int64_t> values) {
  if (product(dims) != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("archive entry " + name + ": extents do not match value count");
  }
  entries_[name] = Entry{std::move(dims), std::move(values)};
}

void Archive::put_text(const std::string& name, std::string text) {
  entries_[name] = Entry{{}, std::move(text)};
}

const Archive::Entry& Archive::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw DataError("archive has no entry '" + name + "'");
  return it->second;
}

const std::vector<double>& Archive::doubles(const std::string& name) const {
  const auto* v = std::get_if<std::vector<double>>(&at(name).payload);
  if (!v) throw DataError("archive entry '" + name + "' is not a float array");
  return *v;
}

const std::vector<std::int64_t>& Archive::ints(const std::string& name) const {
  const auto* v = std::get_if<std::vector<std::int64_t>>(&at(name).payload);
  if (!v) throw DataError("archive entry '" + name + "' is not an integer array");
  return *v;
}

const std::string& Archive::text(const std::string& name) const {
  const auto* v = std::get_if<std::string>(&at(name).payload);
  if (!v) throw DataError("archive entry '" + name + "' is not text");
  return *v;
}

RowMatrixXd Archive::matrix(const std::string& name, Eigen::Index rows) const {
  const auto& v = doubles(name);
  const auto n = static_cast<Eigen::Index>(v.size());
  if (rows <= 0 || n % rows != 0) throw DimensionError("archive entry " + name + " cannot have " +
                                                       std::to_string(rows) + " rows");
  return Eigen::Map<const RowMatrixXd>(v.data(), rows, n / rows);
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

void Archive::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, e] : entries_) {
    write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<std::uint8_t>(e.payload.index()));
    write_pod(os, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) write_pod(os, static_cast<std::uint64_t>(d));
    if (const auto* f = std::get_if<std::vector<double>>(&e.payload)) {
      os.write(reinterpret_cast<const char*>(f->data()), static_cast<std::streamsize>(f->size() * sizeof(double)));
    } else if (const auto* i = std::get_if<std::vector<std::int64_t>>(&e.payload)) {
      os.write(reinterpret_cast<const char*>(i->data()),
               static_cast<std::streamsize>(i->size() * sizeof(std::int64_t)));
    } else {
      const auto& t = std::get<std::string>(e.payload);
      write_pod(os, static_cast<std::uint64_t>(t.size()));
      os.write(t.data(), static_cast<std::streamsize>(t.size()));
    }
  }
  if (!os) throw DataError("failed writing " + path.string());
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  const std::string where = path.string();
  if (!is) throw DataError("cannot open " + where);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError(where + " is not an archive");

  Archive a;
  const auto count = read_pod<std::uint32_t>(is, where);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = read_pod<std::uint32_t>(is, where);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto kind = read_pod<std::uint8_t>(is, where);
    const auto rank = read_pod<std::uint32_t>(is, where);
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = static_cast<std::int64_t>(read_pod<std::uint64_t>(is, where));
    const auto n = static_cast<std::size_t>(product(dims));
    switch (kind) {
      case 0: {
        std::vector<double> v(n);
        is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
        a.entries_[name] = Entry{std::move(dims), std::move(v)};
        break;
      }
      case 1: {
        std::vector<std::int64_t> v(n);
        is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(std::int64_t)));
        a.entries_[name] = Entry{std::move(dims), std::move(v)};
        break;
      }
      case 2: {
        const auto len = read_pod<std::uint64_t>(is, where);
        std::string t(len, '\0');
        is.read(t.data(), static_cast<std::streamsize>(len));
        a.entries_[name] = Entry{std::move(dims), std::move(t)};
        break;
      }
      default:
        throw DataError(where + ": unknown entry kind for '" + name + "'");
    }
    if (!is) throw DataError("truncated archive " + where);
  }
  return a;
}

}  // namespace sparsebody
