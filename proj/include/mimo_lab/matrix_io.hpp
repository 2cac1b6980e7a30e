#pragma once

// Plain-text matrix format:
//   line 1:          rows,cols
//   next rows*cols:  re,im   (row-major)
// Values are written with 17 significant digits so a round trip is lossless.

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>

#include "mimo_lab/error.hpp"
#include "mimo_lab/linalg.hpp"

namespace mimo_lab {

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if constexpr (std::is_floating_point_v<T>) {
    // strtod accepts the forms %.17g produces; from_chars for doubles is not in every libstdc++.
    std::string tmp(s);
    char* end = nullptr;
    out = std::strtod(tmp.c_str(), &end);
    return end == tmp.c_str() + tmp.size();
  } else {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
  }
}

template <class T>
bool parse_pair(std::string_view line, T& a, T& b) {
  const auto comma = line.find(',');
  if (comma == std::string_view::npos) return false;
  return parse_number(line.substr(0, comma), a) && parse_number(line.substr(comma + 1), b);
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string format_matrix(const ComplexMatrix& m) {
  std::string out = std::to_string(m.rows()) + "," + std::to_string(m.cols()) + "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out += detail::format_double(m(i, j).real());
      out += ',';
      out += detail::format_double(m(i, j).imag());
      out += '\n';
    }
  }
  return out;
}

inline ComplexMatrix parse_matrix(std::istream& in, const std::string& source = "<matrix>") {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source, 1, "missing header 'rows,cols'");
  long rows = 0, cols = 0;
  if (!detail::parse_pair(line, rows, cols) || rows < 1 || cols < 1) {
    throw ParseError(source, 1, "malformed header, expected 'rows,cols' with positive integers");
  }
  ComplexMatrix m(rows, cols);
  std::size_t lineno = 1;
  for (long k = 0; k < rows * cols; ++k) {
    ++lineno;
    if (!std::getline(in, line)) throw ParseError(source, lineno, "unexpected end of file");
    double re = 0.0, im = 0.0;
    if (!detail::parse_pair(line, re, im)) throw ParseError(source, lineno, "expected 're,im'");
    if (!std::isfinite(re) || !std::isfinite(im)) throw ParseError(source, lineno, "non-finite entry");
    m(k / cols, k % cols) = cplx(re, im);
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (!detail::trim(line).empty()) throw ParseError(source, lineno, "trailing data after matrix");
  }
  return m;
}

inline ComplexMatrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  return parse_matrix(in, path.string());
}

/// Writes to a sibling temporary and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void save_matrix(const ComplexMatrix& m, const std::filesystem::path& path) {
  write_file_atomic(path, format_matrix(m));
}

}  // namespace mimo_lab
