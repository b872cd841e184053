#ifndef JETFIT_SYNTH_HPP
#define JETFIT_SYNTH_HPP

#include <Eigen/Core>
#include <cstdint>
#include <variant>
#include <vector>

#include "jetfit/cloud.hpp"
#include "jetfit/jet.hpp"

namespace jetfit {

/// Height-field surfaces with analytic normals.
struct PlaneSurface {
  // z = c0 + c1 x + c2 y
  Eigen::Vector3d coeffs = Eigen::Vector3d::Zero();
};
struct QuadricSurface {
  // Order-2 jet: (1, x, y, x^2, xy, y^2) coefficients.
  Eigen::Matrix<double, 6, 1> coeffs = Eigen::Matrix<double, 6, 1>::Zero();
};
struct JetSurface {
  JetOrder order{3};
  Eigen::VectorXd coeffs;  // monomial basis of `order`
};
/// Grid of tiles over the sampling domain, each with its own random jet whose
/// order and curvature come from the shared seed. Mixes flat and
/// high-curvature regions in one cloud.
struct CompositeSurface {
  int tiles = 3;            // tiles x tiles grid
  double curvature = 2.0;   // magnitude of degree->=2 coefficients
  double slope = 0.2;       // magnitude of degree-1 coefficients
  std::uint64_t seed = 1;   // tile layout seed (independent of sampling seed)
};
using Surface = std::variant<PlaneSurface, QuadricSurface, JetSurface, CompositeSurface>;

struct UniformDensity {};
struct StripeDensity {
  double period = 0.5;        // stripe width pair along x, domain units
  double keep_fraction = 0.2; // sampling density in the sparse stripes
};
struct GradientDensity {
  double min_fraction = 0.1;  // density at x = -1 relative to x = +1
};
using DensityPattern = std::variant<UniformDensity, StripeDensity, GradientDensity>;

enum class NoiseModel {
  AlongNormal,  // gaussian displacement along the surface normal
  Isotropic     // gaussian displacement in all three axes
};

/// Deterministic scene recipe; the seed fixes the instance bit-exactly.
struct SceneSpec {
  Surface surface = PlaneSurface{};
  int n_points = 1000;
  double noise_sigma = 0.0;  // fraction of the bounding-box diagonal
  NoiseModel noise_model = NoiseModel::AlongNormal;
  DensityPattern density = UniformDensity{};
  double outlier_fraction = 0.0;  // in [0, 1]
  double outlier_scale = 0.3;     // displacement as fraction of the diagonal
  std::uint64_t seed = 1;
};

/// Generated cloud with ground truth: unit normals for every sample (labels
/// are taken at the clean surface position) and a mask marking displaced
/// outliers.
struct LabeledCloud {
  PointCloud cloud;
  std::vector<std::uint8_t> outlier_mask;  // 1 = outlier

  std::vector<int> inlier_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < outlier_mask.size(); ++i)
      if (!outlier_mask[i]) out.push_back(static_cast<int>(i));
    return out;
  }
};

/// Samples the surface over [-1, 1]^2 with the requested density pattern,
/// perturbs by noise, then displaces the outlier subset. Deterministic per
/// seed (mt19937_64 + Box-Muller; see Rng).
LabeledCloud generate_scene(const SceneSpec& spec);

/// Exact unit normal of the generating surface at (x, y).
Eigen::Vector3d analytic_normal(const Surface& surface, double x, double y);

/// Surface height at (x, y).
double surface_height(const Surface& surface, double x, double y);

}  // namespace jetfit

#endif  // JETFIT_SYNTH_HPP
