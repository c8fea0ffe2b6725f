#pragma once

// Flat `key = value` text files, shared by the pipeline config and the
// detector head spec files. '#' starts a comment line.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "alpr/error.hpp"

namespace alpr {

struct KeyValueEntry {
  std::string key;
  std::string value;
  int line_no = 0;
};

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::vector<KeyValueEntry> parse_key_values(std::istream& in, const std::string& origin) {
  std::vector<KeyValueEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::ConfigError,
                  origin + ":" + std::to_string(line_no) + ": expected key = value, got '" +
                      std::string(body) + "'");
    }
    KeyValueEntry e;
    e.key = std::string(trim(body.substr(0, eq)));
    e.value = std::string(trim(body.substr(eq + 1)));
    e.line_no = line_no;
    if (e.key.empty()) {
      throw Error(ErrorKind::ConfigError, origin + ":" + std::to_string(line_no) + ": empty key");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

inline std::vector<KeyValueEntry> load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path);
  return parse_key_values(in, path);
}

inline double parse_double(std::string_view text, const std::string& what) {
  // std::from_chars for double is available in libstdc++ 11.
  double v = 0;
  const auto t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw Error(ErrorKind::ConfigError, what + ": not a number: '" + std::string(text) + "'");
  }
  return v;
}

inline long long parse_int(std::string_view text, const std::string& what) {
  long long v = 0;
  const auto t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw Error(ErrorKind::ConfigError, what + ": not an integer: '" + std::string(text) + "'");
  }
  return v;
}

inline bool parse_bool(std::string_view text, const std::string& what) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw Error(ErrorKind::ConfigError, what + ": not a boolean: '" + std::string(text) + "'");
}

inline std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto pos = text.find(sep, start);
    const auto piece = text.substr(start, pos == std::string_view::npos ? text.npos : pos - start);
    if (!trim(piece).empty()) out.emplace_back(trim(piece));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace alpr
