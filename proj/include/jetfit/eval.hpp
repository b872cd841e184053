#ifndef JETFIT_EVAL_HPP
#define JETFIT_EVAL_HPP

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "jetfit/cloud.hpp"

namespace jetfit {

inline constexpr double kRadToDeg = 57.295779513082320876798154814105;

/// Unoriented angle between unit vectors, in degrees; range [0, 90].
template <typename Scalar>
Scalar angle_error_deg(const Vec3<Scalar>& pred, const Vec3<Scalar>& gt) {
  if (std::abs(pred.norm() - Scalar(1)) > Scalar(1e-6) ||
      std::abs(gt.norm() - Scalar(1)) > Scalar(1e-6))
    throw std::invalid_argument("angle_error_deg: inputs must be unit vectors");
  const Scalar d = std::min(std::abs(pred.dot(gt)), Scalar(1));
  return std::acos(d) * Scalar(kRadToDeg);
}

/// Root-mean-square of angular errors (degrees).
inline double rmse_deg(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("rmse_deg: empty error vector");
  double sum = 0.0;
  for (double e : errors) sum += e * e;
  return std::sqrt(sum / static_cast<double>(errors.size()));
}

inline double mean_abs_deg(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("mean_abs_deg: empty error vector");
  double sum = 0.0;
  for (double e : errors) sum += std::abs(e);
  return sum / static_cast<double>(errors.size());
}

/// Fraction of points whose error falls below a sweeping threshold.
struct AucCurve {
  std::vector<double> thresholds_deg;  // ascending
  std::vector<double> fractions;       // non-decreasing, in [0, 1]
};

/// Default sweep matching the usual reporting range: 0.5 degree steps over
/// [0, max_deg].
inline std::vector<double> default_auc_thresholds(double max_deg = 30.0) {
  std::vector<double> t;
  for (double v = 0.0; v <= max_deg + 1e-9; v += 0.5) t.push_back(v);
  return t;
}

inline AucCurve auc_curve(const std::vector<double>& errors, std::vector<double> thresholds) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] < thresholds[i - 1])
      throw std::invalid_argument("auc_curve: thresholds must be ascending");
  AucCurve curve;
  curve.thresholds_deg = std::move(thresholds);
  curve.fractions.reserve(curve.thresholds_deg.size());
  for (double t : curve.thresholds_deg) {
    std::size_t below = 0;
    for (double e : errors)
      if (e <= t) ++below;
    curve.fractions.push_back(errors.empty() ? 0.0
                                             : static_cast<double>(below) /
                                                   static_cast<double>(errors.size()));
  }
  return curve;
}

/// Error-map color ramp: linear from blue at 0 degrees to red at 60+.
inline Eigen::Matrix<unsigned char, 3, 1> error_color(double error_deg) {
  const double t = std::min(std::max(error_deg / 60.0, 0.0), 1.0);
  Eigen::Matrix<unsigned char, 3, 1> rgb;
  rgb << static_cast<unsigned char>(std::lround(255.0 * t)), 0,
      static_cast<unsigned char>(std::lround(255.0 * (1.0 - t)));
  return rgb;
}

/// Writes a binary PLY of the cloud colored by per-point error (the ramp
/// above) for external viewers.
void write_error_map_ply(const PointCloud& cloud, const std::vector<double>& errors_deg,
                         const std::string& path);

}  // namespace jetfit

#endif  // JETFIT_EVAL_HPP
