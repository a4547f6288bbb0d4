#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tacserv/common.hpp"

namespace tacserv {

/// Plain-text key-value configuration: one `key = value` per line,
/// '#' starts a comment. Used for surface configs, pipeline manifests
/// and CLI configs.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TacservError("cannot open config file: " + path);
    KeyValueConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      cfg.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw TacservError("cannot write config file: " + path);
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  std::string require_str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw TacservError("missing config key: " + key);
    return it->second;
  }
  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stod(it->second);
  }
  long get_int(const std::string& key, long fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stol(it->second);
  }
  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return it->second == "true" || it->second == "1" || it->second == "yes";
  }

  void set(const std::string& key, const std::string& v) { values_[key] = v; }
  void set(const std::string& key, double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    values_[key] = ss.str();
  }
  void set(const std::string& key, long v) { values_[key] = std::to_string(v); }
  void set(const std::string& key, int v) { values_[key] = std::to_string(v); }
  void set(const std::string& key, bool v) { values_[key] = v ? "true" : "false"; }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  static std::string trim(std::string s) {
    const char* ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace tacserv
