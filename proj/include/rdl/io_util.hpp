#pragma once

// Small text-IO helpers: round-trip-exact double formatting and whole-file
// read/write with atomic replace (write temp, rename).

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rdl {

// 17 significant digits uniquely identify a double; strtod recovers the
// exact bit pattern.
inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  const char* c = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(c, &end);
  if (end == c) throw std::runtime_error("bad number: '" + s + "'");
  return v;
}

inline long long parse_int(const std::string& s) {
  const char* c = s.c_str();
  char* end = nullptr;
  const long long v = std::strtoll(c, &end, 10);
  if (end == c) throw std::runtime_error("bad integer: '" + s + "'");
  return v;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::istringstream ss(read_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(ss, line)) lines.push_back(line);
  return lines;
}

inline void write_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + tmp);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("rename failed: " + path);
}

}  // namespace rdl
