#ifndef JETFIT_ESTIMATORS_HPP
#define JETFIT_ESTIMATORS_HPP

#include <Eigen/Core>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "jetfit/cloud.hpp"
#include "jetfit/jet.hpp"
#include "jetfit/micronet.hpp"
#include "jetfit/tangent.hpp"

namespace jetfit {

enum class RobustKernel { Huber, Tukey };

/// Point-wise weighting schemes for the fit.
struct UniformWeights {};
struct GaussianDistanceWeights {
  double bandwidth = 0.5;  // fraction of the patch radius
};
struct IrlsWeights {
  RobustKernel kernel = RobustKernel::Tukey;
  int iterations = 5;
  double scale = 0.0;  // <= 0: 1.4826 * median absolute residual per iteration
};
struct LearnedWeights {
  std::shared_ptr<const net::FitNet> model;
};
using WeightStrategy =
    std::variant<UniformWeights, GaussianDistanceWeights, IrlsWeights, LearnedWeights>;

/// Point displacement schemes applied before the final fit.
struct NoOffsets {};
struct IterativeReprojection {
  int iterations = 3;
  double step = 1.0;  // in (0, 1]
};
struct LearnedOffsets {
  std::shared_ptr<const net::FitNet> model;
};
using OffsetStrategy = std::variant<NoOffsets, IterativeReprojection, LearnedOffsets>;

struct EstimatorConfig {
  JetOrder order{3};
  ScaleChain scale_chain{std::vector<int>{700, 350, 175}};
  WeightStrategy weights = UniformWeights{};
  OffsetStrategy offsets = NoOffsets{};
  double truncation_threshold = 0.0;  // in [0, 1); 0 disables truncation
};

/// Which rescue path produced the normal, if any.
enum class FallbackLevel { None, UntruncatedWeights, OrderOne, PcaPlane, DegenerateFrame };

const char* to_string(FallbackLevel level);

struct EstimateDiagnostics {
  double condition = 0.0;
  int effective_weights = 0;
  double mean_offset = 0.0;  // patch-radius units
  double max_offset = 0.0;
  FallbackLevel fallback = FallbackLevel::None;
};

struct NormalEstimate {
  int query_index = -1;
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();  // world space, unit
  EstimateDiagnostics diagnostics;
};

/// Full classical pipeline for one query point: neighborhood at the largest
/// scale, PCA frame, weights, optional truncation, offsets, weighted fit at
/// the smallest scale, normal back to world. Degenerate fits fall back to
/// order 1 and then to the PCA plane normal rather than failing; only an
/// unusable frame throws.
NormalEstimate estimate_normal(const PointCloud& cloud, const KdTree& index, int query,
                               const EstimatorConfig& config);

/// Iteratively reweighted least squares: fit, then reweight by a robust
/// kernel of the scaled residuals. Weights lie in (0, 1].
Eigen::VectorXd irls_weights(const LocalPatch& patch, JetOrder order, RobustKernel kernel,
                             int iterations, double scale = 0.0);

/// Robust kernel weight at scaled residual u (kernel(0) = 1).
double kernel_weight(RobustKernel kernel, double u);

/// Zeroes weights below threshold * max(weights); the rest pass through.
/// Throws SingularFitError when fewer than min_survivors remain.
Eigen::VectorXd truncate_weights(const Eigen::VectorXd& weights, double threshold,
                                 int min_survivors);

/// Moves each point along the local z-axis toward the current fit:
/// dz_i += step * (J(beta; x_i, y_i) - (z_i + dz_i)), iterated with fixed
/// weights. Returns full 3-row offsets with zero x/y components.
Eigen::Matrix3Xd reproject_offsets(const LocalPatch& patch, JetOrder order,
                                   const Eigen::VectorXd& weights, int iterations, double step);

/// Ground-truth best order per query: runs the estimator at every order and
/// returns the one with the smallest angular error (ties to the lowest
/// order). Benchmark instrumentation only; requires gt normals.
std::pair<JetOrder, double> best_order_oracle(const PointCloud& cloud, const KdTree& index,
                                              int query, const std::set<int>& orders,
                                              const EstimatorConfig& base_config);

}  // namespace jetfit

#endif  // JETFIT_ESTIMATORS_HPP
