#include "jetfit/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "jetfit/error.hpp"
#include "jetfit/eval.hpp"

namespace jetfit {

namespace {

constexpr double kHuberC = 1.345;
constexpr double kTukeyC = 4.685;
constexpr double kKernelFloor = 1e-12;  // keeps IRLS weights in (0, 1]

LocalPatch patch_prefix(const LocalPatch& patch, int s) {
  LocalPatch out;
  out.frame = patch.frame;
  out.coords = patch.coords.leftCols(s);
  out.source = scale_subset(patch.source, s);
  return out;
}

double median_abs(Eigen::VectorXd values) {
  const Eigen::Index n = values.size();
  values = values.cwiseAbs();
  std::nth_element(values.data(), values.data() + n / 2, values.data() + n);
  double med = values[n / 2];
  if (n % 2 == 0) {
    std::nth_element(values.data(), values.data() + n / 2 - 1, values.data() + n / 2);
    med = (med + values[n / 2 - 1]) / 2.0;
  }
  return med;
}

/// Resolves the network shared by the learned strategies, if any.
const net::FitNet* learned_model(const EstimatorConfig& config) {
  if (const auto* lw = std::get_if<LearnedWeights>(&config.weights))
    if (lw->model) return lw->model.get();
  if (const auto* lo = std::get_if<LearnedOffsets>(&config.offsets))
    if (lo->model) return lo->model.get();
  return nullptr;
}

}  // namespace

const char* to_string(FallbackLevel level) {
  switch (level) {
    case FallbackLevel::None: return "none";
    case FallbackLevel::UntruncatedWeights: return "untruncated";
    case FallbackLevel::OrderOne: return "order1";
    case FallbackLevel::PcaPlane: return "pca_plane";
    case FallbackLevel::DegenerateFrame: return "degenerate_frame";
  }
  return "unknown";
}

double kernel_weight(RobustKernel kernel, double u) {
  const double a = std::abs(u);
  if (kernel == RobustKernel::Huber) return a <= kHuberC ? 1.0 : kHuberC / a;
  if (a >= kTukeyC) return 0.0;
  const double t = 1.0 - (a / kTukeyC) * (a / kTukeyC);
  return t * t;
}

Eigen::VectorXd irls_weights(const LocalPatch& patch, JetOrder order, RobustKernel kernel,
                             int iterations, double scale) {
  if (iterations < 1) throw std::invalid_argument("irls_weights: iterations < 1");
  const Eigen::Index n = patch.size();
  Eigen::VectorXd weights = Eigen::VectorXd::Ones(n);
  const double sigma_floor = 1e-14 * std::max(patch_radius(patch), 1.0);

  for (int it = 0; it < iterations; ++it) {
    FitProblem problem{patch, order, weights, Eigen::Matrix3Xd()};
    const JetCoefficients coeffs = wls_fit(problem);
    Eigen::VectorXd residuals(n);
    for (Eigen::Index i = 0; i < n; ++i)
      residuals[i] =
          patch.coords(2, i) - evaluate_jet(coeffs, patch.coords(0, i), patch.coords(1, i));
    const double sigma = scale > 0.0 ? scale : 1.4826 * median_abs(residuals);
    if (!(sigma > sigma_floor)) {
      weights.setOnes();  // the fit already interpolates; nothing to damp
      break;
    }
    for (Eigen::Index i = 0; i < n; ++i)
      weights[i] = std::max(kernel_weight(kernel, residuals[i] / sigma), kKernelFloor);
  }
  return weights;
}

Eigen::VectorXd truncate_weights(const Eigen::VectorXd& weights, double threshold,
                                 int min_survivors) {
  if (threshold < 0.0 || threshold >= 1.0)
    throw std::invalid_argument("truncate_weights: threshold outside [0, 1)");
  if (threshold == 0.0) return weights;
  const double cut = threshold * weights.maxCoeff();
  Eigen::VectorXd out = weights;
  int survivors = 0;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (out[i] < cut)
      out[i] = 0.0;
    else if (out[i] > 0.0)
      ++survivors;
  }
  if (survivors < min_survivors)
    throw SingularFitError("truncate_weights: only " + std::to_string(survivors) +
                           " survivors for " + std::to_string(min_survivors) + " coefficients");
  return out;
}

Eigen::Matrix3Xd reproject_offsets(const LocalPatch& patch, JetOrder order,
                                   const Eigen::VectorXd& weights, int iterations, double step) {
  if (iterations < 1) throw std::invalid_argument("reproject_offsets: iterations < 1");
  if (!(step > 0.0 && step <= 1.0))
    throw std::invalid_argument("reproject_offsets: step outside (0, 1]");
  const Eigen::Index n = patch.size();
  const double sigma_floor = 1e-14 * std::max(patch_radius(patch), 1.0);

  // Refitting partially-projected heights with fixed weights reproduces the
  // original fit exactly (the projection is linear), so the surface the
  // points move toward must be robustified per iteration: each step
  // reweights by a Tukey kernel of the current residuals, fits, then moves
  // the points partway onto that fit. The caller's weights stay in charge of
  // the final fit on the offset points.
  Eigen::Matrix3Xd offsets = Eigen::Matrix3Xd::Zero(3, n);
  Eigen::VectorXd residuals(n);
  {
    FitProblem initial{patch, order, weights, Eigen::Matrix3Xd()};
    const JetCoefficients coeffs = wls_fit(initial);
    for (Eigen::Index i = 0; i < n; ++i)
      residuals[i] =
          patch.coords(2, i) - evaluate_jet(coeffs, patch.coords(0, i), patch.coords(1, i));
  }
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd robust = weights;
    const double sigma = 1.4826 * median_abs(residuals);
    if (sigma > sigma_floor) {
      for (Eigen::Index i = 0; i < n; ++i)
        robust[i] = weights[i] *
                    std::max(kernel_weight(RobustKernel::Tukey, residuals[i] / sigma),
                             kKernelFloor);
    }
    FitProblem problem{patch, order, robust, offsets};
    const JetCoefficients coeffs = wls_fit(problem);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double target = evaluate_jet(coeffs, patch.coords(0, i), patch.coords(1, i));
      offsets(2, i) += step * (target - (patch.coords(2, i) + offsets(2, i)));
      residuals[i] = patch.coords(2, i) + offsets(2, i) - target;
    }
  }
  return offsets;
}

NormalEstimate estimate_normal(const PointCloud& cloud, const KdTree& index, int query,
                               const EstimatorConfig& config) {
  if (config.truncation_threshold < 0.0 || config.truncation_threshold >= 1.0)
    throw std::invalid_argument("estimate_normal: truncation threshold outside [0, 1)");

  NormalEstimate estimate;
  estimate.query_index = query;

  const net::FitNet* model = learned_model(config);
  ScaleChain chain = config.scale_chain.clamped(static_cast<int>(cloud.size()));
  if (model) {
    if (model->scales.scales != config.scale_chain.scales)
      throw std::invalid_argument("estimate_normal: config scale chain != model scale chain");
    if (chain.scales != model->scales.scales)
      throw std::invalid_argument("estimate_normal: cloud smaller than the learned model's chain");
  }

  const Neighborhood nbhd = neighborhood(index, query, chain.largest());
  const TangentFrame frame = pca_frame(cloud, nbhd);
  const LocalPatch full_patch = to_local(frame, cloud, nbhd);
  const LocalPatch fit_patch = patch_prefix(full_patch, chain.smallest());
  const Eigen::Index n_fit = fit_patch.size();
  const double radius = patch_radius(fit_patch);

  net::NetOutputs net_out;
  if (model) net_out = net::forward(*model, full_patch.coords, patch_radius(full_patch));

  // Weight strategy on the fitting-scale patch.
  Eigen::VectorXd weights;
  try {
    if (std::holds_alternative<UniformWeights>(config.weights)) {
      weights = Eigen::VectorXd::Ones(n_fit);
    } else if (const auto* gauss = std::get_if<GaussianDistanceWeights>(&config.weights)) {
      if (!(gauss->bandwidth > 0.0))
        throw std::invalid_argument("estimate_normal: gaussian bandwidth <= 0");
      const double h = gauss->bandwidth * std::max(radius, 1e-300);
      weights.resize(n_fit);
      for (Eigen::Index i = 0; i < n_fit; ++i) {
        const double d2 = fit_patch.coords.col(i).squaredNorm();
        weights[i] = std::exp(-0.5 * d2 / (h * h));
      }
    } else if (const auto* irls = std::get_if<IrlsWeights>(&config.weights)) {
      weights = irls_weights(fit_patch, config.order, irls->kernel, irls->iterations, irls->scale);
    } else {
      weights = net_out.weights;
    }
  } catch (const SingularFitError&) {
    weights = Eigen::VectorXd::Ones(n_fit);
    estimate.diagnostics.fallback = FallbackLevel::UntruncatedWeights;
  }

  if (config.truncation_threshold > 0.0) {
    try {
      weights = truncate_weights(weights, config.truncation_threshold, config.order.coeff_count());
    } catch (const SingularFitError&) {
      estimate.diagnostics.fallback = FallbackLevel::UntruncatedWeights;
    }
  }

  Eigen::Matrix3Xd offsets;
  try {
    if (std::holds_alternative<NoOffsets>(config.offsets)) {
      offsets = Eigen::Matrix3Xd();
    } else if (const auto* reproject = std::get_if<IterativeReprojection>(&config.offsets)) {
      offsets = reproject_offsets(fit_patch, config.order, weights, reproject->iterations,
                                  reproject->step);
    } else {
      offsets = net_out.offsets;
    }
  } catch (const SingularFitError&) {
    offsets = Eigen::Matrix3Xd();
  }

  if (offsets.cols() == n_fit && radius > 0.0) {
    double sum = 0.0, peak = 0.0;
    for (Eigen::Index i = 0; i < n_fit; ++i) {
      const double mag = offsets.col(i).norm() / radius;
      sum += mag;
      peak = std::max(peak, mag);
    }
    estimate.diagnostics.mean_offset = sum / static_cast<double>(n_fit);
    estimate.diagnostics.max_offset = peak;
  }

  FitDiagnostics fit_diag;
  try {
    const JetCoefficients coeffs =
        wls_fit(FitProblem{fit_patch, config.order, weights, offsets}, &fit_diag);
    estimate.normal = normal_to_world(frame, normal_from_jet(coeffs));
  } catch (const SingularFitError&) {
    try {
      Eigen::VectorXd w1 = weights;
      if ((w1.array() > 0.0).count() < 3) w1.setOnes();
      const JetCoefficients coeffs =
          wls_fit(FitProblem{fit_patch, JetOrder(1), w1, Eigen::Matrix3Xd()}, &fit_diag);
      estimate.normal = normal_to_world(frame, normal_from_jet(coeffs));
      estimate.diagnostics.fallback = FallbackLevel::OrderOne;
    } catch (const SingularFitError&) {
      estimate.normal = frame.rotation.row(2).transpose();
      estimate.diagnostics.fallback = FallbackLevel::PcaPlane;
    }
  }
  estimate.diagnostics.condition = fit_diag.condition;
  estimate.diagnostics.effective_weights = static_cast<int>((weights.array() > 0.0).count());
  return estimate;
}

std::pair<JetOrder, double> best_order_oracle(const PointCloud& cloud, const KdTree& index,
                                              int query, const std::set<int>& orders,
                                              const EstimatorConfig& base_config) {
  if (!cloud.has_normals())
    throw std::invalid_argument("best_order_oracle: cloud has no ground-truth normals");
  if (orders.empty()) throw std::invalid_argument("best_order_oracle: no orders given");
  const Eigen::Vector3d gt = cloud.gt_normals.col(query);
  JetOrder best_order;
  double best_error = std::numeric_limits<double>::infinity();
  for (int o : orders) {  // ascending, so ties keep the lowest order
    EstimatorConfig config = base_config;
    config.order = JetOrder(o);
    const NormalEstimate estimate = estimate_normal(cloud, index, query, config);
    const double err = angle_error_deg<double>(estimate.normal, gt);
    if (err < best_error) {
      best_error = err;
      best_order = config.order;
    }
  }
  return {best_order, best_error};
}

}  // namespace jetfit
