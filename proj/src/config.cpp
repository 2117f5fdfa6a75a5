#include "topo/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "topo/error.hpp"

namespace topo {

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    cfg.values_[item.fullname()] = item.inputs;
  }
  return cfg;
}

std::set<std::string> ConfigFile::keys() const {
  std::set<std::string> out;
  for (const auto& [k, v] : values_) out.insert(k);
  return out;
}

const std::string& ConfigFile::scalar(const std::string& key) const {
  const auto& v = values_.at(key);
  if (v.size() != 1) throw ConfigError(origin_ + ": '" + key + "' must be a single value");
  return v.front();
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? scalar(key) : fallback;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const auto& s = scalar(key);
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ConfigError(origin_ + ": '" + key + "' is not a number: " + s);
  }
  return v;
}

std::int64_t ConfigFile::get_int(const std::string& key, std::int64_t fallback) const {
  if (!has(key)) return fallback;
  const auto& s = scalar(key);
  std::int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ConfigError(origin_ + ": '" + key + "' is not an integer: " + s);
  }
  return v;
}

std::size_t ConfigFile::get_size(const std::string& key, std::size_t fallback) const {
  const auto v = get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ConfigError(origin_ + ": '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const auto& s = scalar(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(origin_ + ": '" + key + "' is not a boolean: " + s);
}

std::vector<std::size_t> ConfigFile::get_size_list(const std::string& key,
                                                   const std::vector<std::size_t>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::size_t> out;
  for (const auto& s : values_.at(key)) {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
      throw ConfigError(origin_ + ": '" + key + "' holds a non-integer entry: " + s);
    }
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> ConfigFile::get_string_list(const std::string& key,
                                                     const std::vector<std::string>& fallback) const {
  return has(key) ? values_.at(key) : fallback;
}

void ConfigFile::reject_unknown(std::string_view section, const std::set<std::string>& allowed) const {
  const std::string prefix = section.empty() ? std::string{} : std::string(section) + ".";
  for (const auto& [key, v] : values_) {
    if (key.rfind(prefix, 0) != 0) continue;
    const auto rest = key.substr(prefix.size());
    if (!section.empty() || rest.find('.') == std::string::npos) {
      if (!allowed.count(rest)) throw ConfigError(origin_ + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace topo
