// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "trajedit/core/errors.hpp"

namespace trajedit::io {

/// Flat `section.key -> value` view of a config file. Two encodings:
///
///   # comment
///   [tas]
///   eta = 0.5
///
/// or the JSON object {"tas": {"eta": 0.5}}. Keys outside any section live at
/// the top level. Every value remembers its line (0 for JSON) for errors.
class KeyValueConfig {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  KeyValueConfig() = default;
  explicit KeyValueConfig(std::string source) : source_(std::move(source)) {}

  static KeyValueConfig parse(std::istream& in, const std::string& source) {
    KeyValueConfig c(source);
    std::string raw, section;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
      const std::string text = trim(raw);
      if (text.empty()) continue;
      if (text.front() == '[') {
        if (text.back() != ']' || text.size() < 3) throw ParseError(source, line, "malformed section header '" + text + "'");
        section = trim(text.substr(1, text.size() - 2));
        continue;
      }
      const auto eq = text.find('=');
      if (eq == std::string::npos) throw ParseError(source, line, "expected 'key = value', got '" + text + "'");
      const std::string key = trim(text.substr(0, eq));
      if (key.empty()) throw ParseError(source, line, "empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (c.entries_.contains(full)) throw ParseError(source, line, "duplicate key '" + full + "'");
      c.entries_[full] = Entry{trim(text.substr(eq + 1)), line};
    }
    return c;
  }

  static KeyValueConfig from_json(const nlohmann::json& j, const std::string& source) {
    if (!j.is_object()) throw ParseError(source, 0, "top-level JSON value must be an object");
    KeyValueConfig c(source);
    c.flatten(j, "");
    return c;
  }

  /// Reads `path`, choosing JSON when the first non-blank character is '{'.
  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path.string() + "'");
    std::stringstream buf;
    buf << f.rdbuf();
    const std::string text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(text);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string(), 0, e.what());
      }
      return from_json(j, path.string());
    }
    std::istringstream in(text);
    return parse(in, path.string());
  }

  const std::string& source() const noexcept { return source_; }
  bool has(const std::string& key) const { return entries_.contains(key); }
  void set(const std::string& key, std::string value) { entries_[key] = Entry{std::move(value), 0}; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    used_.insert(key);
    return it->second.value;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const { return get(key).value_or(fallback); }

  std::string require_string(const std::string& key) const {
    auto v = get(key);
    if (!v) throw ParseError(source_, 0, "missing required key '" + key + "'");
    return *v;
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    return to_number<double>(key, *v, "a number");
  }

  int get_int(const std::string& key, int fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    return to_number<int>(key, *v, "an integer");
  }

  std::optional<int> get_optional_int(const std::string& key) const {
    auto v = get(key);
    if (!v) return std::nullopt;
    return to_number<int>(key, *v, "an integer");
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "yes" || *v == "on" || *v == "1") return true;
    if (*v == "false" || *v == "no" || *v == "off" || *v == "0") return false;
    throw ParseError(source_, line_of(key), key + ": expected a boolean, got '" + *v + "'");
  }

  /// Comma- or space-separated list.
  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    auto v = get(key);
    if (!v) return out;
    std::string item;
    for (char ch : *v + ",") {
      if (ch == ',' || std::isspace(static_cast<unsigned char>(ch))) {
        if (!item.empty()) out.push_back(item);
        item.clear();
      } else {
        item.push_back(ch);
      }
    }
    return out;
  }

  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& s : get_list(key)) out.push_back(to_number<int>(key, s, "a list of integers"));
    return out;
  }

  int line_of(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? 0 : it->second.line;
  }

  /// Throws on the first key nobody asked for (typos must not pass silently).
  void reject_unknown() const {
    for (const auto& [k, e] : entries_) {
      if (!used_.contains(k)) throw ParseError(source_, e.line, "unknown key '" + k + "'");
    }
  }

  /// Nested JSON snapshot of every entry, values kept as strings.
  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, e] : entries_) {
      const auto dot = k.find('.');
      if (dot == std::string::npos) {
        j[k] = e.value;
      } else {
        j[k.substr(0, dot)][k.substr(dot + 1)] = e.value;
      }
    }
    return j;
  }

  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  template <class T>
  T to_number(const std::string& key, const std::string& text, const char* what) const {
    T v{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
      throw ParseError(source_, line_of(key), key + ": expected " + what + ", got '" + text + "'");
    }
    return v;
  }

  void flatten(const nlohmann::json& j, const std::string& prefix) {
    for (const auto& [k, v] : j.items()) {
      const std::string key = prefix.empty() ? k : prefix + "." + k;
      if (v.is_object()) {
        if (!prefix.empty()) throw ParseError(source_, 0, "'" + key + "': sections cannot nest");
        flatten(v, key);
      } else if (v.is_array()) {
        std::string joined;
        for (const auto& item : v) {
          if (!joined.empty()) joined += ",";
          joined += item.is_string() ? item.get<std::string>() : item.dump();
        }
        entries_[key] = Entry{joined, 0};
      } else {
        entries_[key] = Entry{v.is_string() ? v.get<std::string>() : v.dump(), 0};
      }
    }
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
  mutable std::set<std::string> used_;
};

}  // namespace trajedit::io
