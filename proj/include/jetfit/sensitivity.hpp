#ifndef JETFIT_SENSITIVITY_HPP
#define JETFIT_SENSITIVITY_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <stdexcept>
#include <utility>
#include <vector>

#include "jetfit/jet.hpp"

namespace jetfit {

/// Closed-form derivatives of a completed fit with respect to each point
/// weight, with the fit residuals that drive them.
template <typename Scalar>
struct SensitivityReportT {
  MatX<Scalar> dbeta_dw;    // coeff_count x n_points, column i = dbeta/dw_i
  Mat3X<Scalar> dnormal_dw; // column i = dnormal/dw_i
  VecX<Scalar> residuals;   // z_i - J(beta; x_i, y_i), unscaled
};

using SensitivityReport = SensitivityReportT<double>;

/// Full per-point sensitivity of the fit `coeffs` (which must come from
/// wls_fit on the same problem). Uses the identical ridge-damped normal
/// matrix as the fit: dbeta/dw_i = (M^T W M + lambda I)^-1 M_i^T (z_i - z_i').
template <typename Scalar>
SensitivityReportT<Scalar> sensitivity_report(const FitProblemT<Scalar>& problem,
                                              const JetCoefficientsT<Scalar>& coeffs) {
  const auto sys = detail::build_wls_system(problem);
  const Eigen::Index n = problem.size();

  const VecX<Scalar> beta_scaled = coeffs.beta.cwiseQuotient(sys.col_scale);
  const VecX<Scalar> resid_scaled = sys.z - sys.M * beta_scaled;

  SensitivityReportT<Scalar> report;
  report.residuals = resid_scaled * sys.radius;

  // One factorization serves all points: solve A x = M_i^T per column, scale
  // by the point's residual.
  report.dbeta_dw.resize(coeffs.beta.size(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const VecX<Scalar> solved = sys.solve_refined(VecX<Scalar>(sys.M.row(i).transpose()));
    report.dbeta_dw.col(i) = sys.col_scale.cwiseProduct(solved * resid_scaled[i]);
  }

  const Eigen::Matrix<Scalar, 3, 2> jac = normal_jacobian(coeffs);
  report.dnormal_dw.resize(3, n);
  for (Eigen::Index i = 0; i < n; ++i)
    report.dnormal_dw.col(i) =
        jac.col(0) * report.dbeta_dw(1, i) + jac.col(1) * report.dbeta_dw(2, i);
  return report;
}

/// dbeta/dw_i for a single point.
template <typename Scalar>
VecX<Scalar> dbeta_dweight(const FitProblemT<Scalar>& problem,
                           const JetCoefficientsT<Scalar>& coeffs, Eigen::Index i) {
  if (i < 0 || i >= problem.size()) throw std::invalid_argument("dbeta_dweight: index out of range");
  const auto sys = detail::build_wls_system(problem);
  const VecX<Scalar> beta_scaled = coeffs.beta.cwiseQuotient(sys.col_scale);
  const Scalar resid = sys.z[i] - sys.M.row(i).dot(beta_scaled);
  const VecX<Scalar> d = sys.solve_refined(VecX<Scalar>(sys.M.row(i).transpose() * resid));
  return sys.col_scale.cwiseProduct(d);
}

/// dnormal/dw_i: the normal-normalization Jacobian applied to entries 1 and 2
/// of dbeta/dw_i. Always orthogonal to the fitted normal.
template <typename Scalar>
Vec3<Scalar> dnormal_dweight(const FitProblemT<Scalar>& problem,
                             const JetCoefficientsT<Scalar>& coeffs, Eigen::Index i) {
  const VecX<Scalar> db = dbeta_dweight(problem, coeffs, i);
  const Eigen::Matrix<Scalar, 3, 2> jac = normal_jacobian(coeffs);
  return jac.col(0) * db[1] + jac.col(1) * db[2];
}

/// Points ranked by how strongly their weight steers the fitted normal,
/// descending; far-off-surface points rank first. Ties by ascending index.
template <typename Scalar>
std::vector<std::pair<Eigen::Index, Scalar>> outlier_impact_ranking(
    const FitProblemT<Scalar>& problem) {
  const JetCoefficientsT<Scalar> coeffs = wls_fit(problem);
  const SensitivityReportT<Scalar> report = sensitivity_report(problem, coeffs);
  std::vector<std::pair<Eigen::Index, Scalar>> ranking;
  ranking.reserve(problem.size());
  for (Eigen::Index i = 0; i < problem.size(); ++i)
    ranking.emplace_back(i, report.dnormal_dw.col(i).norm());
  std::stable_sort(ranking.begin(), ranking.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return ranking;
}

}  // namespace jetfit

#endif  // JETFIT_SENSITIVITY_HPP
