#pragma once

#include <cstdio>
#include <fstream>
#include <string>

#include "semrec/common.hpp"

namespace semrec {

// Minimal CSV helpers for the numeric schemas used here; no quoting rules.
inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  for (;;) {
    size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') {
    out.back().pop_back();
  }
  return out;
}

// %.9g: shortest form that round-trips any float32 exactly.
inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(str_cat("cannot open for reading: ", path));
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(str_cat("cannot open for writing: ", path));
  return out;
}

inline int64_t parse_int(const std::string& s, const std::string& ctx) {
  size_t pos = 0;
  int64_t v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw DataError(str_cat(ctx, ": not an integer: '", s, "'"));
  }
  if (pos != s.size()) throw DataError(str_cat(ctx, ": not an integer: '", s, "'"));
  return v;
}

inline double parse_real(const std::string& s, const std::string& ctx) {
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw DataError(str_cat(ctx, ": not a number: '", s, "'"));
  }
  if (pos != s.size()) throw DataError(str_cat(ctx, ": not a number: '", s, "'"));
  return v;
}

}  // namespace semrec
