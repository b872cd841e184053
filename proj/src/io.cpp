#include "jetfit/io.hpp"

#include <array>
#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "jetfit/error.hpp"

namespace jetfit {

namespace {

bool is_blank(const std::string& line) {
  for (char c : line)
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  return true;
}

/// Parses exactly `arity` doubles per non-blank line; reports 1-based
/// line/column on the first malformed token.
std::vector<std::array<double, 3>> parse_rows(const std::string& path, int arity) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::array<double, 3>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_blank(line)) continue;
    std::array<double, 3> row{0.0, 0.0, 0.0};
    const char* cursor = line.c_str();
    for (int f = 0; f < arity; ++f) {
      while (*cursor && std::isspace(static_cast<unsigned char>(*cursor))) ++cursor;
      char* end = nullptr;
      errno = 0;
      const double value = std::strtod(cursor, &end);
      if (end == cursor || errno == ERANGE)
        throw IoError("expected number in " + path, lineno,
                      static_cast<std::size_t>(cursor - line.c_str()) + 1);
      row[static_cast<std::size_t>(f)] = value;
      cursor = end;
    }
    while (*cursor && std::isspace(static_cast<unsigned char>(*cursor))) ++cursor;
    if (*cursor != '\0')
      throw IoError("trailing characters in " + path, lineno,
                    static_cast<std::size_t>(cursor - line.c_str()) + 1);
    rows.push_back(row);
  }
  return rows;
}

Eigen::Matrix3Xd rows_to_matrix(const std::vector<std::array<double, 3>>& rows) {
  Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    m.col(static_cast<Eigen::Index>(i)) << rows[i][0], rows[i][1], rows[i][2];
  return m;
}

void write_rows(const std::string& path, const Eigen::Matrix3Xd& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (Eigen::Index i = 0; i < m.cols(); ++i) {
    out << format_double(m(0, i)) << ' ' << format_double(m(1, i)) << ' '
        << format_double(m(2, i)) << '\n';
  }
  if (!out) throw IoError("write failure on " + path);
}

}  // namespace

std::string format_double(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

Eigen::Matrix3Xd read_xyz(const std::string& path) {
  auto rows = parse_rows(path, 3);
  auto m = rows_to_matrix(rows);
  if (!m.allFinite()) throw IoError("non-finite coordinate in " + path);
  return m;
}

void write_xyz(const std::string& path, const Eigen::Matrix3Xd& points) {
  write_rows(path, points);
}

Eigen::Matrix3Xd read_normals(const std::string& path) {
  auto m = rows_to_matrix(parse_rows(path, 3));
  for (Eigen::Index i = 0; i < m.cols(); ++i) {
    const double n = m.col(i).norm();
    if (!(n > 1e-6) || !m.col(i).allFinite())
      throw IoError("zero or non-finite normal in " + path, static_cast<std::size_t>(i) + 1);
    m.col(i) /= n;
  }
  return m;
}

void write_normals(const std::string& path, const Eigen::Matrix3Xd& normals) {
  write_rows(path, normals);
}

std::vector<std::uint8_t> read_mask(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> mask;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_blank(line)) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    std::string rest;
    if (ss >> rest) throw IoError("trailing characters in " + path, lineno);
    if (token == "0")
      mask.push_back(0);
    else if (token == "1")
      mask.push_back(1);
    else
      throw IoError("mask entries must be 0 or 1 in " + path, lineno, 1);
  }
  return mask;
}

void write_mask(const std::string& path, const std::vector<std::uint8_t>& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (std::uint8_t v : mask) out << (v ? '1' : '0') << '\n';
  if (!out) throw IoError("write failure on " + path);
}

void write_ply(const std::string& path, const Eigen::Matrix3Xd& points,
               const Eigen::Matrix<std::uint8_t, 3, Eigen::Dynamic>& colors) {
  if (points.cols() != colors.cols())
    throw std::invalid_argument("write_ply: point/color count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "ply\n"
      << "format binary_little_endian 1.0\n"
      << "element vertex " << points.cols() << "\n"
      << "property float x\n"
      << "property float y\n"
      << "property float z\n"
      << "property uchar red\n"
      << "property uchar green\n"
      << "property uchar blue\n"
      << "end_header\n";
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const float xyz[3] = {static_cast<float>(points(0, i)), static_cast<float>(points(1, i)),
                          static_cast<float>(points(2, i))};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    const std::uint8_t rgb[3] = {colors(0, i), colors(1, i), colors(2, i)};
    out.write(reinterpret_cast<const char*>(rgb), sizeof(rgb));
  }
  if (!out) throw IoError("write failure on " + path);
}

PlyCloud read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  Eigen::Index count = -1;
  bool saw_format = false;
  std::vector<std::string> properties;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != "ply") throw IoError("not a PLY file: " + path, lineno);
      continue;
    }
    std::istringstream ss(line);
    std::string keyword;
    ss >> keyword;
    if (keyword == "comment") continue;
    if (keyword == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "binary_little_endian")
        throw IoError("unsupported PLY format '" + fmt + "' in " + path, lineno);
      saw_format = true;
    } else if (keyword == "element") {
      std::string what;
      ss >> what >> count;
      if (what != "vertex") throw IoError("unsupported PLY element in " + path, lineno);
    } else if (keyword == "property") {
      std::string type, name;
      ss >> type >> name;
      properties.push_back(type + " " + name);
    } else if (keyword == "end_header") {
      break;
    } else {
      throw IoError("unexpected PLY header line in " + path, lineno);
    }
  }
  const std::vector<std::string> expected = {"float x",    "float y",     "float z",
                                             "uchar red",  "uchar green", "uchar blue"};
  if (!saw_format || count < 0 || properties != expected)
    throw IoError("unsupported PLY layout in " + path);

  PlyCloud cloud;
  cloud.positions.resize(3, count);
  cloud.colors.resize(3, count);
  for (Eigen::Index i = 0; i < count; ++i) {
    float xyz[3];
    std::uint8_t rgb[3];
    in.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
    in.read(reinterpret_cast<char*>(rgb), sizeof(rgb));
    if (!in) throw IoError("truncated PLY payload in " + path);
    cloud.positions.col(i) << xyz[0], xyz[1], xyz[2];
    cloud.colors.col(i) << rgb[0], rgb[1], rgb[2];
  }
  return cloud;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("write failure on " + path);
}

}  // namespace jetfit
