#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mabert/track_io.hpp"

namespace mabert {

/// Flat `key = value` run configuration. Lines starting with '#' are
/// comments; keys are dotted (model.d, plan.epochs, ...). Lookup errors
/// carry the key and, where known, the source line.
class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse_text(const std::string& text, const std::string& origin = "<config>") {
    ConfigFile cfg;
    cfg.origin_ = origin;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const std::string trimmed = trim(line);
      if (trimmed.empty() || trimmed[0] == '#') continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                 ": expected 'key = value', got '" + trimmed + "'");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": empty key");
      cfg.kv_[key] = value;
      cfg.line_[key] = line_no;
    }
    return cfg;
  }

  static ConfigFile parse_file(const std::string& path) {
    return parse_text(read_file(path), path);
  }

  void set(const std::string& key, const std::string& value) {
    kv_[key] = value;
    line_[key] = 0;
  }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  const std::map<std::string, std::string>& entries() const { return kv_; }

  std::string get_str(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end())
      throw std::runtime_error(origin_ + ": missing required config key '" + key + "'");
    return it->second;
  }

  std::string get_str(const std::string& key, const std::string& fallback) const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key) const { return to_double(key, get_str(key)); }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? to_double(key, get_str(key)) : fallback;
  }

  std::uint64_t get_u64(const std::string& key) const { return to_u64(key, get_str(key)); }
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? to_u64(key, get_str(key)) : fallback;
  }

  std::int64_t get_i64(const std::string& key, std::int64_t fallback) const {
    if (!has(key)) return fallback;
    return static_cast<std::int64_t>(to_u64(key, get_str(key)));
  }

  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    std::istringstream ss(get_str(key));
    std::string item;
    while (std::getline(ss, item, ','))
      if (!trim(item).empty()) out.push_back(to_double(key, trim(item)));
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::string where(const std::string& key) const {
    const auto it = line_.find(key);
    if (it == line_.end() || it->second == 0) return origin_;
    return origin_ + ":" + std::to_string(it->second);
  }

  double to_double(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw std::runtime_error(where(key) + ": key '" + key + "': not a number: '" + v + "'");
    }
  }

  std::uint64_t to_u64(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      const unsigned long long u = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return u;
    } catch (const std::exception&) {
      throw std::runtime_error(where(key) + ": key '" + key + "': not an integer: '" + v + "'");
    }
  }

  std::string origin_ = "<config>";
  std::map<std::string, std::string> kv_;
  std::map<std::string, int> line_;
};

}  // namespace mabert
