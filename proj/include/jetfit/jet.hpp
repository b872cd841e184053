#ifndef JETFIT_JET_HPP
#define JETFIT_JET_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "jetfit/error.hpp"
#include "jetfit/tangent.hpp"

namespace jetfit {

/// Truncated polynomial degree of the height-field surface model.
struct JetOrder {
  int n = 3;

  JetOrder() = default;
  explicit JetOrder(int order) : n(order) {
    if (n < 1 || n > 6) throw std::invalid_argument("JetOrder: order must be in [1, 6]");
  }

  /// Number of coefficients (n+1)(n+2)/2.
  int coeff_count() const { return (n + 1) * (n + 2) / 2; }
};

/// Exponent pairs (a, b) of the monomial basis x^a y^b, degree-ascending and
/// x-exponent descending within a degree:
///   1; x, y; x^2, xy, y^2; x^3, x^2 y, x y^2, y^3; ...
/// Index 1 is x and index 2 is y, the two coefficients the surface normal
/// depends on.
inline std::vector<std::pair<int, int>> monomial_exponents(JetOrder order) {
  std::vector<std::pair<int, int>> exps;
  exps.reserve(order.coeff_count());
  for (int k = 0; k <= order.n; ++k)
    for (int j = 0; j <= k; ++j) exps.emplace_back(k - j, j);
  return exps;
}

/// Row of monomials evaluated at (x, y), in the basis order above.
template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> monomial_row(JetOrder order, Scalar x, Scalar y) {
  if (!(std::isfinite(x) && std::isfinite(y)))
    throw std::invalid_argument("monomial_row: non-finite input");
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> row(order.coeff_count());
  Scalar xp[7], yp[7];
  xp[0] = yp[0] = Scalar(1);
  for (int i = 1; i <= order.n; ++i) {
    xp[i] = xp[i - 1] * x;
    yp[i] = yp[i - 1] * y;
  }
  int idx = 0;
  for (int k = 0; k <= order.n; ++k)
    for (int j = 0; j <= k; ++j) row[idx++] = xp[k - j] * yp[j];
  return row;
}

/// Design matrix with one monomial row per (x_i, y_i).
template <typename Scalar>
MatX<Scalar> design_matrix(JetOrder order, const VecX<Scalar>& x, const VecX<Scalar>& y) {
  MatX<Scalar> m(x.size(), order.coeff_count());
  for (Eigen::Index i = 0; i < x.size(); ++i) m.row(i) = monomial_row(order, x[i], y[i]);
  return m;
}

/// Partial derivatives of the monomial row with respect to x and y.
template <typename Scalar>
void monomial_row_derivatives(JetOrder order, Scalar x, Scalar y,
                              Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& dx,
                              Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& dy) {
  const int count = order.coeff_count();
  dx.resize(count);
  dy.resize(count);
  Scalar xp[7], yp[7];
  xp[0] = yp[0] = Scalar(1);
  for (int i = 1; i <= order.n; ++i) {
    xp[i] = xp[i - 1] * x;
    yp[i] = yp[i - 1] * y;
  }
  int idx = 0;
  for (int k = 0; k <= order.n; ++k) {
    for (int j = 0; j <= k; ++j) {
      const int a = k - j, b = j;
      dx[idx] = a == 0 ? Scalar(0) : Scalar(a) * xp[a - 1] * yp[b];
      dy[idx] = b == 0 ? Scalar(0) : Scalar(b) * xp[a] * yp[b - 1];
      ++idx;
    }
  }
}

/// Fitted surface coefficients in the monomial basis order above.
template <typename Scalar>
struct JetCoefficientsT {
  JetOrder order;
  VecX<Scalar> beta;
};

using JetCoefficients = JetCoefficientsT<double>;

/// One weighted fit: local patch, polynomial order, per-point weights, and
/// optional per-point displacements applied before fitting. An empty offset
/// matrix (0 columns) means no displacement.
template <typename Scalar>
struct FitProblemT {
  LocalPatchT<Scalar> patch;
  JetOrder order;
  VecX<Scalar> weights;
  Mat3X<Scalar> offsets;

  Eigen::Index size() const { return patch.coords.cols(); }
  bool has_offsets() const { return offsets.cols() != 0; }
};

using FitProblem = FitProblemT<double>;

/// Post-fit conditioning report.
struct FitDiagnostics {
  double condition = 0.0;    // eigenvalue ratio of the damped normal matrix
  int effective_points = 0;  // strictly positive weights
  double lambda = 0.0;       // ridge added to the normal matrix diagonal
};

namespace detail {

/// The scaled, damped weighted normal equations shared by the fit, the
/// weight-sensitivity formulas, and the network backward pass. Coordinates
/// are divided by the patch radius before building the design matrix;
/// col_scale maps scaled coefficients back (beta = col_scale .* beta_scaled).
template <typename Scalar>
struct WlsSystemT {
  MatX<Scalar> M;    // scaled design matrix, one row per point
  VecX<Scalar> z;    // scaled heights
  VecX<Scalar> u, v; // scaled abscissae backing M's rows
  VecX<Scalar> w;
  Scalar radius = 1;
  VecX<Scalar> col_scale;
  MatX<Scalar> gram;  // M^T W M, undamped
  VecX<Scalar> rhs;   // M^T W z
  Scalar lambda = 0;
  Eigen::LDLT<MatX<Scalar>> ldlt;  // of gram + lambda I
  int effective_points = 0;

  /// Solves the undamped normal equations through the damped factorization
  /// with one refinement step. Every consumer of the factorization (the fit,
  /// the weight sensitivities, the network adjoint) must go through this so
  /// their linearizations agree.
  VecX<Scalar> solve_refined(const VecX<Scalar>& v) const {
    if (ldlt.info() != Eigen::Success)
      throw SingularFitError("wls_fit: damped normal equations failed to factorize");
    VecX<Scalar> x = ldlt.solve(v);
    x += ldlt.solve(v - gram * x);
    return x;
  }

  /// The fitted coefficients in scaled coordinates; the refinement removes
  /// the ridge bias, which is what keeps residual orthogonality at solver
  /// precision.
  VecX<Scalar> beta_scaled() const {
    VecX<Scalar> beta = solve_refined(rhs);
    if (!beta.allFinite()) throw SingularFitError("wls_fit: non-finite solution");
    return beta;
  }
};

inline constexpr double kRidgeScale = 1e-9;

template <typename Scalar>
WlsSystemT<Scalar> build_wls_system(const FitProblemT<Scalar>& problem) {
  const Eigen::Index n = problem.size();
  const int count = problem.order.coeff_count();
  if (problem.weights.size() != n)
    throw std::invalid_argument("FitProblem: weight count != point count");
  if (problem.has_offsets() && problem.offsets.cols() != n)
    throw std::invalid_argument("FitProblem: offset count != point count");
  if (!problem.weights.allFinite() || (problem.weights.array() < Scalar(0)).any())
    throw std::invalid_argument("FitProblem: weights must be finite and non-negative");
  if (problem.has_offsets() && !problem.offsets.allFinite())
    throw std::invalid_argument("FitProblem: non-finite offset");

  WlsSystemT<Scalar> sys;
  sys.w = problem.weights;
  sys.effective_points = static_cast<int>((sys.w.array() > Scalar(0)).count());
  if (sys.effective_points < count)
    throw SingularFitError("wls_fit: " + std::to_string(sys.effective_points) +
                           " effective points for " + std::to_string(count) + " coefficients");

  // Patch radius over the points that actually enter the fit, so a
  // zero-weighted point cannot distort the conditioning rescale.
  Scalar radius = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (sys.w[i] > Scalar(0)) radius = std::max(radius, problem.patch.coords.col(i).norm());
  sys.radius = radius > Scalar(0) ? radius : Scalar(1);

  sys.u.resize(n);
  sys.v.resize(n);
  sys.z.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec3<Scalar> p = problem.patch.coords.col(i);
    if (problem.has_offsets()) p += problem.offsets.col(i);
    sys.u[i] = p.x() / sys.radius;
    sys.v[i] = p.y() / sys.radius;
    sys.z[i] = p.z() / sys.radius;
  }
  sys.M = design_matrix(problem.order, sys.u, sys.v);

  sys.col_scale.resize(count);
  const auto exps = monomial_exponents(problem.order);
  for (int j = 0; j < count; ++j)
    sys.col_scale[j] = std::pow(sys.radius, Scalar(1 - exps[j].first - exps[j].second));

  sys.gram = sys.M.transpose() * sys.w.asDiagonal() * sys.M;
  sys.rhs = sys.M.transpose() * (sys.w.cwiseProduct(sys.z));
  sys.lambda = Scalar(kRidgeScale) * sys.gram.trace() / Scalar(count);
  MatX<Scalar> damped = sys.gram;
  damped.diagonal().array() += sys.lambda;
  sys.ldlt.compute(damped);
  return sys;
}

}  // namespace detail

/// Weighted least-squares jet fit on the (optionally offset) patch
/// coordinates. beta solves M^T W (M beta - z) = 0 on the offset points; with
/// zero offsets this is the plain weighted normal-equations solution.
template <typename Scalar>
JetCoefficientsT<Scalar> wls_fit(const FitProblemT<Scalar>& problem,
                                 FitDiagnostics* diagnostics = nullptr) {
  const auto sys = detail::build_wls_system(problem);
  JetCoefficientsT<Scalar> coeffs;
  coeffs.order = problem.order;
  coeffs.beta = sys.col_scale.cwiseProduct(sys.beta_scaled());
  if (diagnostics) {
    diagnostics->effective_points = sys.effective_points;
    diagnostics->lambda = static_cast<double>(sys.lambda);
    MatX<Scalar> damped = sys.gram;
    damped.diagonal().array() += sys.lambda;
    Eigen::SelfAdjointEigenSolver<MatX<Scalar>> eig(damped, Eigen::EigenvaluesOnly);
    const Scalar lo = eig.eigenvalues().cwiseAbs().minCoeff();
    const Scalar hi = eig.eigenvalues().cwiseAbs().maxCoeff();
    diagnostics->condition = lo > Scalar(0) ? static_cast<double>(hi / lo)
                                            : std::numeric_limits<double>::infinity();
  }
  return coeffs;
}

/// Height of the fitted surface at (x, y).
template <typename Scalar>
Scalar evaluate_jet(const JetCoefficientsT<Scalar>& coeffs, Scalar x, Scalar y) {
  return monomial_row(coeffs.order, x, y).dot(coeffs.beta);
}

/// Unit surface normal at the origin of the fitting frame,
/// (-beta_1, -beta_2, 1) normalized; always points along +z locally.
template <typename Scalar>
Vec3<Scalar> normal_from_jet(const JetCoefficientsT<Scalar>& coeffs) {
  const Scalar b1 = coeffs.beta[1], b2 = coeffs.beta[2];
  Vec3<Scalar> n(-b1, -b2, Scalar(1));
  return n / std::sqrt(b1 * b1 + b2 * b2 + Scalar(1));
}

/// Jacobian of the unit normal with respect to (beta_1, beta_2); both columns
/// are orthogonal to the normal.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 2> normal_jacobian(const JetCoefficientsT<Scalar>& coeffs) {
  const Scalar b1 = coeffs.beta[1], b2 = coeffs.beta[2];
  const Vec3<Scalar> dir(-b1, -b2, Scalar(1));
  const Scalar s2 = b1 * b1 + b2 * b2 + Scalar(1);
  const Scalar s = std::sqrt(s2);
  Eigen::Matrix<Scalar, 3, 2> jac;
  jac.col(0) = Vec3<Scalar>(-1, 0, 0) / s - dir * (b1 / (s2 * s));
  jac.col(1) = Vec3<Scalar>(0, -1, 0) / s - dir * (b2 / (s2 * s));
  return jac;
}

}  // namespace jetfit

#endif  // JETFIT_JET_HPP
