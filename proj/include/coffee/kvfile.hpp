#pragma once

// Flat "key = value" text with [section] headers; a small subset of TOML.
// Keys are addressed as "section.key". Values keep their raw text (quotes stripped).

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "coffee/error.hpp"

namespace coffee {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  std::int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

class KeyValueFile {
 public:
  static KeyValueFile parse(std::string_view text) {
    KeyValueFile f;
    std::string section;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto end = text.find('\n', start);
      std::string_view line = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
      start = end == std::string_view::npos ? text.size() + 1 : end + 1;
      ++line_no;
      line = trim(strip_comment(line));
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ParseError(line_no, "unterminated section header");
        section = std::string(trim(line.substr(1, line.size() - 2)));
        if (section.empty()) throw ParseError(line_no, "empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError(line_no, "expected key = value");
      const auto key = trim(line.substr(0, eq));
      auto value = trim(line.substr(eq + 1));
      if (key.empty()) throw ParseError(line_no, "empty key");
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
      if (f.values_.count(full)) throw ParseError(line_no, "duplicate key '" + full + "'");
      f.values_[full] = std::string(value);
      f.order_.push_back(full);
    }
    return f;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::optional<std::string> get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    const auto d = parse_double(*v);
    if (!d) throw ConfigError("key '" + key + "': expected a number, got '" + *v + "'");
    return *d;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    const auto d = parse_int(*v);
    if (!d) throw ConfigError("key '" + key + "': expected an integer, got '" + *v + "'");
    return *d;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ConfigError("key '" + key + "': expected true/false, got '" + *v + "'");
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
  }

  void set(const std::string& key, std::string value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = std::move(value);
  }
  void set(const std::string& key, double v) { set(key, format_double(v)); }
  void set(const std::string& key, std::int64_t v) { set(key, std::to_string(v)); }
  void set(const std::string& key, int v) { set(key, std::to_string(v)); }
  void set(const std::string& key, bool v) { set(key, std::string(v ? "true" : "false")); }

  // Sections in first-insertion order; keys without a dot go first.
  std::string write() const {
    std::vector<std::string> sections;
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> grouped;
    for (const auto& full : order_) {
      const auto dot = full.rfind('.');
      const std::string sec = dot == std::string::npos ? "" : full.substr(0, dot);
      const std::string key = dot == std::string::npos ? full : full.substr(dot + 1);
      if (!grouped.count(sec)) sections.push_back(sec);
      grouped[sec].emplace_back(key, values_.at(full));
    }
    std::ostringstream out;
    bool first = true;
    for (const auto& sec : sections) {
      if (!sec.empty()) {
        if (!first) out << '\n';
        out << '[' << sec << "]\n";
      }
      first = false;
      for (const auto& [k, v] : grouped[sec]) out << k << " = " << quote_if_needed(v) << '\n';
    }
    return out.str();
  }

 private:
  static std::string_view strip_comment(std::string_view line) {
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quotes = !in_quotes;
      if (line[i] == '#' && !in_quotes) return line.substr(0, i);
    }
    return line;
  }

  static std::string quote_if_needed(const std::string& v) {
    if (parse_double(v) || v == "true" || v == "false") return v;
    return '"' + v + '"';
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace coffee
