#include "jetfit/eval.hpp"

#include <stdexcept>

#include "jetfit/io.hpp"

namespace jetfit {

void write_error_map_ply(const PointCloud& cloud, const std::vector<double>& errors_deg,
                         const std::string& path) {
  if (static_cast<Eigen::Index>(errors_deg.size()) != cloud.size())
    throw std::invalid_argument("write_error_map_ply: error/point count mismatch");
  Eigen::Matrix<std::uint8_t, 3, Eigen::Dynamic> colors(3, cloud.size());
  for (Eigen::Index i = 0; i < cloud.size(); ++i)
    colors.col(i) = error_color(errors_deg[static_cast<std::size_t>(i)]);
  write_ply(path, cloud.points, colors);
}

}  // namespace jetfit
