#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

namespace decayrnn {

/// Shortest decimal string that round-trips to the same double.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

/// Six significant digits, for human-facing text.
inline std::string format_human(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

/// Writes `content` to a sibling temp file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

/// Hex SHA-256 digest.
std::string sha256_hex(const std::string& content);

}  // namespace decayrnn
