// Run configuration files: JSON, or the TOML subset used by the sample
// configs (tables, key = value, strings, numbers, booleans, flat arrays).
#pragma once

#include <cctype>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "decor/database_io.hpp"

namespace decor {

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Drops a trailing comment that is not inside a string.
inline std::string_view strip_comment(std::string_view s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

inline nlohmann::json toml_value(std::string_view v, std::size_t line) {
  auto fail = [&](const std::string& why) -> nlohmann::json {
    throw Error("toml line " + std::to_string(line) + ": " + why);
  };
  v = trim(v);
  if (v.empty()) return fail("missing value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') return fail("unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        const char e = v[++i];
        out.push_back(e == 'n' ? '\n' : e == 't' ? '\t' : e);
      } else {
        out.push_back(v[i]);
      }
    }
    return out;
  }
  if (v.front() == '[') {
    if (v.back() != ']') return fail("unterminated array");
    nlohmann::json arr = nlohmann::json::array();
    std::string_view body = trim(v.substr(1, v.size() - 2));
    while (!body.empty()) {
      std::size_t end = 0;
      bool in_str = false;
      while (end < body.size() && (in_str || body[end] != ',')) {
        if (body[end] == '"') in_str = !in_str;
        ++end;
      }
      auto item = trim(body.substr(0, end));
      if (!item.empty()) arr.push_back(toml_value(item, line));
      body = end < body.size() ? trim(body.substr(end + 1)) : std::string_view{};
    }
    return arr;
  }
  if (v == "true") return true;
  if (v == "false") return false;
  std::string num;
  for (char c : v) {
    if (c != '_') num.push_back(c);
  }
  try {
    std::size_t used = 0;
    if (num.find_first_of(".eE") == std::string::npos || num.starts_with("0x")) {
      const long long i = std::stoll(num, &used, 0);
      if (used == num.size()) return i;
    } else {
      const double d = std::stod(num, &used);
      if (used == num.size()) return d;
    }
  } catch (const std::exception&) {
  }
  return fail("cannot parse value '" + std::string(v) + "'");
}

}  // namespace detail

inline nlohmann::json parse_toml(std::string_view text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = detail::trim(detail::strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw Error("toml line " + std::to_string(line_no) + ": bad table");
      const std::string name(detail::trim(line.substr(1, line.size() - 2)));
      if (root.contains(name)) throw Error("toml line " + std::to_string(line_no) + ": duplicate table " + name);
      root[name] = nlohmann::json::object();
      table = &root[name];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw Error("toml line " + std::to_string(line_no) + ": expected key = value");
    std::string key(detail::trim(line.substr(0, eq)));
    if (key.size() >= 2 && key.front() == '"' && key.back() == '"') key = key.substr(1, key.size() - 2);
    if (key.empty()) throw Error("toml line " + std::to_string(line_no) + ": empty key");
    if (table->contains(key)) throw Error("toml line " + std::to_string(line_no) + ": duplicate key " + key);
    (*table)[key] = detail::toml_value(line.substr(eq + 1), line_no);
  }
  return root;
}

// Chooses the parser by extension: .toml is TOML, anything else JSON.
inline nlohmann::json load_config_document(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  if (path.extension() == ".toml") return parse_toml(text);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("config " + path.string() + ": " + e.what());
  }
}

}  // namespace decor
