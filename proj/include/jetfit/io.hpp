#ifndef JETFIT_IO_HPP
#define JETFIT_IO_HPP

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

namespace jetfit {

// Plain-text interchange files, one whitespace-separated record per line:
//   .xyz      x y z
//   .normals  nx ny nz
//   mask      0 or 1
// Parsers are strict: malformed tokens raise IoError with the 1-based line
// and column; blank lines are ignored.

Eigen::Matrix3Xd read_xyz(const std::string& path);
void write_xyz(const std::string& path, const Eigen::Matrix3Xd& points);

/// Reads unit vectors; rows are normalized on load (tolerating file rounding)
/// and a zero-length record is an error.
Eigen::Matrix3Xd read_normals(const std::string& path);
void write_normals(const std::string& path, const Eigen::Matrix3Xd& normals);

std::vector<std::uint8_t> read_mask(const std::string& path);
void write_mask(const std::string& path, const std::vector<std::uint8_t>& mask);

/// Binary little-endian PLY with float32 positions and uint8 RGB per vertex.
struct PlyCloud {
  Eigen::Matrix3Xf positions;
  Eigen::Matrix<std::uint8_t, 3, Eigen::Dynamic> colors;
};

void write_ply(const std::string& path, const Eigen::Matrix3Xd& points,
               const Eigen::Matrix<std::uint8_t, 3, Eigen::Dynamic>& colors);
PlyCloud read_ply(const std::string& path);

/// Fixed-format double for text outputs; 17 significant digits round-trip
/// exactly and keep re-runs byte-identical.
std::string format_double(double value);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace jetfit

#endif  // JETFIT_IO_HPP
