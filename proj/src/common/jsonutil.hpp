#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "common/error.hpp"

namespace shapguard {

using json = nlohmann::json;

inline std::string slurp_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void spit_file(const std::string& path, const std::string& content) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write file: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

inline json load_json(const std::string& path) {
  try {
    return json::parse(slurp_file(path));
  } catch (const json::parse_error& e) {
    throw DataError("invalid JSON in " + path + ": " + e.what());
  }
}

inline void save_json(const std::string& path, const json& j) {
  spit_file(path, j.dump(2) + "\n");
}

/// Formats a double with full round-trip precision; used everywhere a
/// float lands in a text artifact so re-runs are byte-identical.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace shapguard
