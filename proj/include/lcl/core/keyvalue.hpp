#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Flat `key=value` text. Blank lines and lines starting with '#' are skipped.
/// Keys are consumed as they are read; `finish()` rejects any left over.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(const std::string& text, const std::string& source = "<config>") {
    KeyValues kv;
    kv.source_ = source;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
      }
      std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
      if (kv.values_.count(key)) throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      kv.values_[key] = trim(line.substr(eq + 1));
      kv.order_.push_back(key);
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::vector<std::string>& keys() const { return order_; }

  std::string raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(source_ + ": missing key '" + key + "'");
    return it->second;
  }

  /// Reads `key` into `out` if present and marks it consumed.
  template <typename V>
  void read(const std::string& key, V& out) {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    used_[key] = true;
    out = convert<V>(key, it->second);
  }

  void read_list(const std::string& key, std::vector<std::string>& out) {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    used_[key] = true;
    out = split(it->second, ',');
  }

  /// Throws listing every key never consumed by `read`.
  void finish() const {
    std::string unknown;
    for (const auto& k : order_) {
      if (!used_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    }
    if (!unknown.empty()) throw ConfigError(source_ + ": unknown key(s): " + unknown);
  }

 private:
  template <typename V>
  V convert(const std::string& key, const std::string& text) const {
    if constexpr (std::is_same_v<V, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<V, bool>) {
      if (text == "1" || text == "true" || text == "on" || text == "yes") return true;
      if (text == "0" || text == "false" || text == "off" || text == "no") return false;
      throw ConfigError(source_ + ": key '" + key + "' expects a boolean, got '" + text + "'");
    } else if constexpr (std::is_floating_point_v<V>) {
      try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing");
        return static_cast<V>(v);
      } catch (const std::exception&) {
        throw ConfigError(source_ + ": key '" + key + "' expects a number, got '" + text + "'");
      }
    } else {
      V v{};
      const auto* end = text.data() + text.size();
      auto [p, ec] = std::from_chars(text.data(), end, v);
      if (ec != std::errc() || p != end) {
        throw ConfigError(source_ + ": key '" + key + "' expects an integer, got '" + text + "'");
      }
      return v;
    }
  }

  std::string source_;
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  mutable std::map<std::string, bool> used_;
};

}  // namespace lcl
