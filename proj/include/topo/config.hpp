#pragma once

// Flat key/value view of a TOML config file. Keys are "section.key"; values
// keep the raw text of every array element. Malformed values raise
// ConfigError naming the key.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace topo {

class ConfigFile {
 public:
  ConfigFile() = default;
  static ConfigFile load(const std::filesystem::path& path);
  static ConfigFile parse(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::set<std::string> keys() const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_size_list(const std::string& key,
                                         const std::vector<std::size_t>& fallback) const;
  std::vector<std::string> get_string_list(const std::string& key,
                                           const std::vector<std::string>& fallback) const;

  /// Throws ConfigError when a key under `section` is not in `allowed`.
  void reject_unknown(std::string_view section, const std::set<std::string>& allowed) const;

  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;
  std::map<std::string, std::vector<std::string>> values_;

  const std::string& scalar(const std::string& key) const;
};

}  // namespace topo
