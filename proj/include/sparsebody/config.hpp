#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sparsebody {

/// Plain-text "key = value" settings. Blank lines and lines starting with '#'
/// are ignored; later keys override earlier ones.
class KeyValues {
 public:
  KeyValues() = default;
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Typed reads; a present but malformed value throws ConfigurationError.
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;

  /// Keys that start with none of the given prefixes, for rejecting typos.
  std::vector<std::string> unknown_keys(const std::vector<std::string>& known_prefixes) const;

  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace sparsebody
