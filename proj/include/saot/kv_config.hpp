#pragma once

// Flat "key = value" configuration text. '#' starts a comment; blank lines
// are ignored. Values are typed on access.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "saot/error.hpp"

namespace saot {

class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(std::string_view text, const std::string& origin = "<config>") {
    KvConfig c;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigurationError(origin + ":" + std::to_string(line_no) +
                                 ": expected 'key = value'");
      }
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) {
        throw ConfigurationError(origin + ":" + std::to_string(line_no) + ": empty key");
      }
      c.values_[key] = trim(t.substr(eq + 1));
    }
    return c;
  }

  static KvConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigurationError("cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& s = it->second;
    if (s == "-inf") return -INFINITY;
    if (s == "inf") return INFINITY;
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) bad(key, s, "a number");
    return v;
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& s = it->second;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) bad(key, s, "a non-negative integer");
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    bad(key, it->second, "true or false");
  }

  /// Rejects keys outside `known`, so typos fail loudly.
  void require_known(const std::set<std::string>& known) const {
    for (const auto& [k, _] : values_) {
      if (!known.count(k)) throw ConfigurationError("unknown config key '" + k + "'");
    }
  }

  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
  }

  [[noreturn]] static void bad(const std::string& key, const std::string& v, const char* want) {
    throw ConfigurationError("config key '" + key + "' = '" + v + "' is not " + want);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace saot
