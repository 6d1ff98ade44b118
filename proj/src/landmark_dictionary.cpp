#include "sparsebody/landmark_dictionary.hpp"

#include "sparsebody/errors.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace sparsebody {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<Index> parse_index_list(const std::string& text, const std::string& where) {
  std::vector<Index> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<Index>(v));
    } catch (const std::exception&) {
      throw ConfigurationError("bad vertex index '" + item + "' in " + where);
    }
  }
  return out;
}

template <typename LineFn>
void for_each_line(const std::string& text, LineFn fn) {
  std::stringstream ss(text);
  std::string line;
  int number = 0;
  while (std::getline(ss, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    fn(line, number);
  }
}

}  // namespace

LandmarkDictionary::LandmarkDictionary(std::vector<LandmarkPatch> patches) : patches_(std::move(patches)) {
  std::unordered_set<std::string> seen;
  for (const auto& p : patches_) {
    if (p.code.empty()) throw ConfigurationError("empty landmark code");
    if (!seen.insert(p.code).second) throw ConfigurationError("duplicate landmark code " + p.code);
    if (p.vertices.empty()) throw ConfigurationError("landmark " + p.code + " has no patch");
    if (std::find(p.vertices.begin(), p.vertices.end(), p.median) == p.vertices.end()) {
      throw ConfigurationError("median vertex of " + p.code + " is not in its patch");
    }
  }
}

std::optional<Index> LandmarkDictionary::find(const std::string& code) const {
  for (std::size_t i = 0; i < patches_.size(); ++i) {
    if (patches_[i].code == code) return static_cast<Index>(i);
  }
  return std::nullopt;
}

Index LandmarkDictionary::index_of(const std::string& code) const {
  if (auto i = find(code)) return *i;
  throw LookupError("unknown landmark code " + code);
}

std::vector<std::string> LandmarkDictionary::codes() const {
  std::vector<std::string> out;
  for (const auto& p : patches_) out.push_back(p.code);
  return out;
}

std::vector<Index> LandmarkDictionary::medians() const {
  std::vector<Index> out;
  for (const auto& p : patches_) out.push_back(p.median);
  return out;
}

LandmarkDictionary LandmarkDictionary::hard_assignment() const {
  std::vector<LandmarkPatch> hard;
  for (const auto& p : patches_) hard.push_back({p.code, p.median, {p.median}});
  return LandmarkDictionary(std::move(hard));
}

std::string LandmarkDictionary::to_text() const {
  std::ostringstream os;
  for (const auto& p : patches_) {
    os << p.code << ": " << p.median << ';';
    for (std::size_t i = 0; i < p.vertices.size(); ++i) os << (i ? "," : " ") << p.vertices[i];
    os << '\n';
  }
  return os.str();
}

LandmarkDictionary LandmarkDictionary::from_text(const std::string& text) {
  std::vector<LandmarkPatch> patches;
  for_each_line(text, [&](const std::string& line, int number) {
    const auto colon = line.find(':');
    const auto semi = line.find(';');
    if (colon == std::string::npos || semi == std::string::npos || semi < colon) {
      throw ConfigurationError("dictionary line " + std::to_string(number) + ": expected 'CODE: median; i1,i2,...'");
    }
    LandmarkPatch p;
    p.code = trim(line.substr(0, colon));
    const auto median = parse_index_list(line.substr(colon + 1, semi - colon - 1), "dictionary line " +
                                                                                       std::to_string(number));
    if (median.size() != 1) throw ConfigurationError("dictionary line " + std::to_string(number) + ": one median");
    p.median = median[0];
    p.vertices = parse_index_list(line.substr(semi + 1), "dictionary line " + std::to_string(number));
    patches.push_back(std::move(p));
  });
  return LandmarkDictionary(std::move(patches));
}

std::string LandmarkDictionary::to_patch_table() const {
  std::ostringstream os;
  for (const auto& p : patches_) {
    os << p.code << ": " << p.median;
    for (Index v : p.vertices) {
      if (v != p.median) os << ',' << v;
    }
    os << '\n';
  }
  return os.str();
}

LandmarkDictionary LandmarkDictionary::from_patch_table(const std::string& text) {
  std::vector<LandmarkPatch> patches;
  for_each_line(text, [&](const std::string& line, int number) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw ConfigurationError("patch table line " + std::to_string(number) + ": expected 'CODE: i0,i1,...'");
    }
    LandmarkPatch p;
    p.code = trim(line.substr(0, colon));
    p.vertices = parse_index_list(line.substr(colon + 1), "patch table line " + std::to_string(number));
    if (p.vertices.empty()) throw ConfigurationError("landmark " + p.code + " has no patch");
    p.median = p.vertices.front();
    patches.push_back(std::move(p));
  });
  return LandmarkDictionary(std::move(patches));
}

void LandmarkDictionary::check_vertex_range(Index vertex_count) const {
  for (const auto& p : patches_) {
    for (Index v : p.vertices) {
      if (v >= vertex_count) {
        throw ConfigurationError("landmark " + p.code + " references vertex " + std::to_string(v) + " of " +
                                 std::to_string(vertex_count));
      }
    }
  }
}

}  // namespace sparsebody
