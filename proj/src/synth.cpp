#include "jetfit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "jetfit/error.hpp"
#include "jetfit/random.hpp"

namespace jetfit {

namespace {

/// Height and gradient of a jet in one pass.
void jet_height_gradient(const JetOrder& order, const Eigen::VectorXd& coeffs, double x, double y,
                         double& h, double& gx, double& gy) {
  const auto row = monomial_row(order, x, y);
  Eigen::Matrix<double, 1, Eigen::Dynamic> dx, dy;
  monomial_row_derivatives(order, x, y, dx, dy);
  h = row.dot(coeffs);
  gx = dx.dot(coeffs);
  gy = dy.dot(coeffs);
}

void height_gradient(const Surface& surface, double x, double y, double& h, double& gx,
                     double& gy);

/// Deterministic per-tile jets for a composite surface; row-major tile order.
std::vector<JetSurface> composite_tiles(const CompositeSurface& surface) {
  if (surface.tiles < 1) throw std::invalid_argument("CompositeSurface: tiles < 1");
  Rng rng(surface.seed);
  std::vector<JetSurface> tiles;
  tiles.reserve(static_cast<std::size_t>(surface.tiles) * surface.tiles);
  for (int t = 0; t < surface.tiles * surface.tiles; ++t) {
    JetSurface jet;
    jet.order = JetOrder(1 + static_cast<int>(rng.index(3)));
    jet.coeffs = Eigen::VectorXd::Zero(jet.order.coeff_count());
    const auto exps = monomial_exponents(jet.order);
    for (int j = 0; j < jet.order.coeff_count(); ++j) {
      const int degree = exps[static_cast<std::size_t>(j)].first +
                         exps[static_cast<std::size_t>(j)].second;
      if (degree == 1)
        jet.coeffs[j] = rng.uniform(-surface.slope, surface.slope);
      else if (degree >= 2)
        jet.coeffs[j] = rng.uniform(-surface.curvature, surface.curvature);
    }
    tiles.push_back(std::move(jet));
  }
  return tiles;
}

int tile_of(const CompositeSurface& surface, double coord) {
  const double t = (std::clamp(coord, -1.0, 1.0) + 1.0) / 2.0 * surface.tiles;
  return std::min(surface.tiles - 1, std::max(0, static_cast<int>(t)));
}

void height_gradient(const Surface& surface, double x, double y, double& h, double& gx,
                     double& gy) {
  if (const auto* plane = std::get_if<PlaneSurface>(&surface)) {
    h = plane->coeffs[0] + plane->coeffs[1] * x + plane->coeffs[2] * y;
    gx = plane->coeffs[1];
    gy = plane->coeffs[2];
  } else if (const auto* quadric = std::get_if<QuadricSurface>(&surface)) {
    jet_height_gradient(JetOrder(2), quadric->coeffs, x, y, h, gx, gy);
  } else if (const auto* jet = std::get_if<JetSurface>(&surface)) {
    if (jet->coeffs.size() != jet->order.coeff_count())
      throw std::invalid_argument("JetSurface: coefficient count mismatch");
    jet_height_gradient(jet->order, jet->coeffs, x, y, h, gx, gy);
  } else {
    const auto& composite = std::get<CompositeSurface>(surface);
    const auto tiles = composite_tiles(composite);
    const int idx = tile_of(composite, y) * composite.tiles + tile_of(composite, x);
    const auto& tile_jet = tiles[static_cast<std::size_t>(idx)];
    jet_height_gradient(tile_jet.order, tile_jet.coeffs, x, y, h, gx, gy);
  }
}

double accept_probability(const DensityPattern& density, double x) {
  if (std::holds_alternative<UniformDensity>(density)) return 1.0;
  if (const auto* stripes = std::get_if<StripeDensity>(&density)) {
    if (stripes->period <= 0.0) throw std::invalid_argument("StripeDensity: period <= 0");
    const double phase = std::fmod(x + 1.0, stripes->period);
    return phase < stripes->period / 2.0 ? 1.0 : stripes->keep_fraction;
  }
  const auto& gradient = std::get<GradientDensity>(density);
  return gradient.min_fraction + (1.0 - gradient.min_fraction) * (x + 1.0) / 2.0;
}

}  // namespace

double surface_height(const Surface& surface, double x, double y) {
  double h, gx, gy;
  height_gradient(surface, x, y, h, gx, gy);
  return h;
}

Eigen::Vector3d analytic_normal(const Surface& surface, double x, double y) {
  double h, gx, gy;
  height_gradient(surface, x, y, h, gx, gy);
  Eigen::Vector3d n(-gx, -gy, 1.0);
  return n / n.norm();
}

LabeledCloud generate_scene(const SceneSpec& spec) {
  if (spec.n_points < 1) throw std::invalid_argument("SceneSpec: n_points < 1");
  if (spec.noise_sigma < 0.0) throw std::invalid_argument("SceneSpec: negative noise sigma");
  if (spec.outlier_fraction < 0.0 || spec.outlier_fraction > 1.0)
    throw std::invalid_argument("SceneSpec: outlier_fraction outside [0, 1]");

  Rng rng(spec.seed);
  const int n = spec.n_points;

  // Rejection-sample (x, y) with the density pattern; per candidate the draw
  // order is fixed (x, y, accept).
  LabeledCloud out;
  out.cloud.points.resize(3, n);
  out.cloud.gt_normals.resize(3, n);
  long long attempts = 0;
  const long long max_attempts = 10000LL * n;
  for (int i = 0; i < n;) {
    if (++attempts > max_attempts)
      throw Error("generate_scene: density pattern keeps rejecting samples");
    const double x = rng.uniform(-1.0, 1.0);
    const double y = rng.uniform(-1.0, 1.0);
    const double u = rng.uniform();
    if (u > accept_probability(spec.density, x)) continue;
    out.cloud.points.col(i) << x, y, surface_height(spec.surface, x, y);
    out.cloud.gt_normals.col(i) = analytic_normal(spec.surface, x, y);
    ++i;
  }

  const Eigen::Vector3d lo = out.cloud.points.rowwise().minCoeff();
  const Eigen::Vector3d hi = out.cloud.points.rowwise().maxCoeff();
  const double diagonal = (hi - lo).norm();

  const double sigma = spec.noise_sigma * (diagonal > 0.0 ? diagonal : 1.0);
  for (int i = 0; i < n; ++i) {
    if (spec.noise_model == NoiseModel::AlongNormal) {
      out.cloud.points.col(i) += sigma * rng.gaussian() * out.cloud.gt_normals.col(i);
    } else {
      out.cloud.points.col(i) += sigma * rng.gaussian3();
    }
  }

  out.outlier_mask.assign(static_cast<std::size_t>(n), 0);
  const int n_outliers = static_cast<int>(std::llround(spec.outlier_fraction * n));
  if (n_outliers > 0) {
    // Partial Fisher-Yates pick of distinct indices, then displacement in
    // ascending index order so the rng stream is position-independent.
    std::vector<int> pool(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<int> chosen;
    chosen.reserve(static_cast<std::size_t>(n_outliers));
    for (int i = 0; i < n_outliers; ++i) {
      const auto j = i + static_cast<int>(rng.index(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
      chosen.push_back(pool[static_cast<std::size_t>(i)]);
    }
    std::sort(chosen.begin(), chosen.end());
    const double displacement = spec.outlier_scale * (diagonal > 0.0 ? diagonal : 1.0);
    for (int idx : chosen) {
      out.cloud.points.col(idx) += displacement * rng.unit3();
      out.outlier_mask[static_cast<std::size_t>(idx)] = 1;
    }
  }
  return out;
}

}  // namespace jetfit
