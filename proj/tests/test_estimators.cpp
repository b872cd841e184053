#include <doctest.h>

#include "jetfit/estimators.hpp"
#include "jetfit/eval.hpp"
#include "jetfit/synth.hpp"
#include "test_support.hpp"

using namespace jetfit;
using testing::patch_from;

namespace {

constexpr double kRad = 0.017453292519943295;  // degrees -> radians

EstimatorConfig basic_config(int order, int scale) {
  EstimatorConfig config;
  config.order = JetOrder(order);
  config.scale_chain = ScaleChain({scale});
  return config;
}

SceneSpec quadric_scene(std::uint64_t seed) {
  SceneSpec spec;
  QuadricSurface quadric;
  quadric.coeffs << 0.0, 0.1, -0.2, 0.8, 0.4, -0.6;
  spec.surface = quadric;
  spec.n_points = 600;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("defaults follow the standard pipeline settings") {
  const EstimatorConfig config;
  CHECK(config.order.n == 3);
  CHECK(config.scale_chain.scales == std::vector<int>{700, 350, 175});
  CHECK(std::holds_alternative<UniformWeights>(config.weights));
  CHECK(std::holds_alternative<NoOffsets>(config.offsets));
  CHECK(config.truncation_threshold == 0.0);
}

TEST_CASE("noise-free plane is recovered by every classical config") {
  SceneSpec spec;
  PlaneSurface plane;
  plane.coeffs << 0.5, 0.3, -0.7;
  spec.surface = plane;
  spec.n_points = 400;
  spec.seed = 9;
  const LabeledCloud labeled = generate_scene(spec);
  const KdTree index = build_index(labeled.cloud);

  for (int order : {1, 2, 3}) {
    EstimatorConfig config = basic_config(order, 60);
    const NormalEstimate est = estimate_normal(labeled.cloud, index, 11, config);
    CHECK(testing::unoriented_angle(est.normal, labeled.cloud.gt_normals.col(11)) < 1e-6);
    CHECK(est.diagnostics.fallback == FallbackLevel::None);
    CHECK(std::abs(est.normal.norm() - 1.0) < 1e-10);
  }
}

TEST_CASE("noise-free curved surface: truncation remainder shrinks with scale") {
  // Through the PCA frame the generator is no longer a polynomial height
  // field, so recovery carries a jet-truncation remainder that vanishes as
  // the neighborhood shrinks.
  const LabeledCloud labeled = generate_scene(quadric_scene(21));
  const KdTree index = build_index(labeled.cloud);
  for (int q : {5, 100, 333}) {
    const double wide = testing::unoriented_angle(
        estimate_normal(labeled.cloud, index, q, basic_config(3, 40)).normal,
        labeled.cloud.gt_normals.col(q));
    const double narrow = testing::unoriented_angle(
        estimate_normal(labeled.cloud, index, q, basic_config(3, 16)).normal,
        labeled.cloud.gt_normals.col(q));
    CHECK(wide < 2e-3);
    CHECK(narrow < wide);
  }
}

TEST_CASE("underfitting a curved surface loses accuracy away from saddles") {
  SceneSpec spec = quadric_scene(33);
  spec.n_points = 800;
  const LabeledCloud labeled = generate_scene(spec);
  const KdTree index = build_index(labeled.cloud);

  double err1 = 0.0, err3 = 0.0;
  int counted = 0;
  for (int q = 0; q < 200; ++q) {
    const Eigen::Vector3d gt = labeled.cloud.gt_normals.col(q);
    const NormalEstimate low = estimate_normal(labeled.cloud, index, q, basic_config(1, 50));
    const NormalEstimate high = estimate_normal(labeled.cloud, index, q, basic_config(3, 50));
    err1 += testing::unoriented_angle(low.normal, gt);
    err3 += testing::unoriented_angle(high.normal, gt);
    ++counted;
  }
  CHECK(err3 / counted < err1 / counted);  // order mismatch hurts on curvature
}

TEST_CASE("irls: perfect data keeps every weight at one") {
  Rng rng(71);
  const JetCoefficients gen = testing::random_jet(rng, JetOrder(2), 0.5);
  const LocalPatch patch = testing::patch_on_jet(rng, gen, 30);
  const Eigen::VectorXd weights =
      irls_weights(patch, JetOrder(2), RobustKernel::Tukey, 3);
  CHECK((weights.array() == 1.0).all());
}

TEST_CASE("irls crushes a gross outlier that wrecks the uniform fit") {
  Rng rng(72);
  Eigen::Matrix3Xd coords(3, 31);
  for (int i = 0; i < 30; ++i)
    coords.col(i) << rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0;
  coords.col(30) << 0.8, 0.6, 3.0;  // gross outlier
  const LocalPatch patch = patch_from(coords);

  FitProblem uniform{patch, JetOrder(1), Eigen::VectorXd::Ones(31), Eigen::Matrix3Xd()};
  const double uniform_error =
      testing::unoriented_angle(normal_from_jet(wls_fit(uniform)), Eigen::Vector3d::UnitZ());
  CHECK(uniform_error > 5.0 * kRad);

  const Eigen::VectorXd robust =
      irls_weights(patch, JetOrder(1), RobustKernel::Tukey, 5);
  CHECK(robust[30] < 1e-3);
  FitProblem weighted{patch, JetOrder(1), robust, Eigen::Matrix3Xd()};
  const double robust_error =
      testing::unoriented_angle(normal_from_jet(wls_fit(weighted)), Eigen::Vector3d::UnitZ());
  CHECK(robust_error < 0.5 * kRad);
  CHECK((robust.array() > 0.0).all());
  CHECK((robust.array() <= 1.0).all());
}

TEST_CASE("irls weights are invariant under rigid motion of the cloud") {
  const LabeledCloud labeled = generate_scene(quadric_scene(73));
  const KdTree index = build_index(labeled.cloud);
  Rng rng(173);
  const Eigen::Matrix3d rot = testing::random_rotation(rng);
  const Eigen::Vector3d shift = rng.gaussian3();
  PointCloud moved;
  moved.points = (rot * labeled.cloud.points).colwise() + shift;
  const KdTree moved_index = build_index(moved);

  for (int q : {4, 150}) {
    const Neighborhood nbhd = neighborhood(index, q, 40);
    const LocalPatch patch = to_local(pca_frame(labeled.cloud, nbhd), labeled.cloud, nbhd);
    const Neighborhood moved_nbhd = neighborhood(moved_index, q, 40);
    const LocalPatch moved_patch = to_local(pca_frame(moved, moved_nbhd), moved, moved_nbhd);
    CHECK(moved_nbhd.indices == nbhd.indices);
    const Eigen::VectorXd before = irls_weights(patch, JetOrder(2), RobustKernel::Huber, 4);
    const Eigen::VectorXd after =
        irls_weights(moved_patch, JetOrder(2), RobustKernel::Huber, 4);
    CHECK((before - after).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("robust kernels at zero residual") {
  CHECK(kernel_weight(RobustKernel::Huber, 0.0) == 1.0);
  CHECK(kernel_weight(RobustKernel::Tukey, 0.0) == 1.0);
  CHECK(kernel_weight(RobustKernel::Huber, 100.0) < 0.02);
  CHECK(kernel_weight(RobustKernel::Tukey, 100.0) == 0.0);
}

TEST_CASE("truncation rules") {
  Eigen::VectorXd weights(3);
  weights << 1.0, 0.04, 0.5;

  // Threshold 0 is the identity.
  CHECK((truncate_weights(weights, 0.0, 3) - weights).norm() == 0.0);

  // All-equal weights survive any threshold below one.
  const Eigen::VectorXd equal = Eigen::VectorXd::Constant(5, 0.7);
  CHECK((truncate_weights(equal, 0.9, 5) - equal).norm() == 0.0);

  const Eigen::VectorXd cut = truncate_weights(weights, 0.05, 2);
  CHECK(cut[0] == 1.0);
  CHECK(cut[1] == 0.0);
  CHECK(cut[2] == 0.5);

  CHECK_THROWS_AS(truncate_weights(weights, 0.05, 3), SingularFitError);
  CHECK_THROWS_AS(truncate_weights(weights, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(truncate_weights(weights, -0.1, 1), std::invalid_argument);
}

TEST_CASE("reprojection leaves on-surface points alone") {
  Rng rng(74);
  const JetCoefficients gen = testing::random_jet(rng, JetOrder(3), 0.5);
  const LocalPatch patch = testing::patch_on_jet(rng, gen, 25);
  const Eigen::Matrix3Xd offsets =
      reproject_offsets(patch, JetOrder(3), Eigen::VectorXd::Ones(25), 2, 1.0);
  CHECK(offsets.cwiseAbs().maxCoeff() < 1e-9);
  CHECK(offsets.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(offsets.row(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("one reprojection step shrinks the outlier residual") {
  Rng rng(75);
  Eigen::Matrix3Xd coords(3, 25);
  for (int i = 0; i < 24; ++i)
    coords.col(i) << rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0;
  coords.col(24) << 0.1, 0.2, 2.0;
  const LocalPatch patch = patch_from(coords);
  const Eigen::VectorXd weights = Eigen::VectorXd::Ones(25);

  FitProblem before{patch, JetOrder(1), weights, Eigen::Matrix3Xd()};
  const JetCoefficients base = wls_fit(before);
  const double before_residual =
      std::abs(coords(2, 24) - evaluate_jet(base, coords(0, 24), coords(1, 24)));

  const Eigen::Matrix3Xd offsets = reproject_offsets(patch, JetOrder(1), weights, 1, 1.0);
  FitProblem after{patch, JetOrder(1), weights, offsets};
  const JetCoefficients refit = wls_fit(after);
  const double after_residual = std::abs(coords(2, 24) + offsets(2, 24) -
                                         evaluate_jet(refit, coords(0, 24), coords(1, 24)));
  CHECK(after_residual < before_residual);
}

TEST_CASE("offsets beat weights-only on a plane with an outlier") {
  Rng rng(76);
  Eigen::Matrix3Xd coords(3, 30);
  for (int i = 0; i < 29; ++i)
    coords.col(i) << rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0;
  coords.col(29) << 0.7, -0.5, 1.5;
  const LocalPatch patch = patch_from(coords);
  const Eigen::VectorXd weights = Eigen::VectorXd::Ones(30);

  FitProblem plain{patch, JetOrder(1), weights, Eigen::Matrix3Xd()};
  const double plain_error =
      testing::unoriented_angle(normal_from_jet(wls_fit(plain)), Eigen::Vector3d::UnitZ());

  const Eigen::Matrix3Xd offsets = reproject_offsets(patch, JetOrder(1), weights, 5, 1.0);
  FitProblem adjusted{patch, JetOrder(1), weights, offsets};
  const double adjusted_error =
      testing::unoriented_angle(normal_from_jet(wls_fit(adjusted)), Eigen::Vector3d::UnitZ());
  CHECK(adjusted_error < plain_error);
}

TEST_CASE("step-1 reprojection reaches a fixed point on any data") {
  Rng rng(77);
  FitProblem problem = testing::random_problem(rng, JetOrder(2), 18);
  const Eigen::Matrix3Xd once =
      reproject_offsets(problem.patch, JetOrder(2), problem.weights, 1, 1.0);
  // After one full step the offset targets sit exactly on the refitted
  // surface, so further iterations change nothing.
  const Eigen::Matrix3Xd twice =
      reproject_offsets(problem.patch, JetOrder(2), problem.weights, 2, 1.0);
  CHECK((once - twice).cwiseAbs().maxCoeff() < 1e-9);

  FitProblem offset_problem{problem.patch, JetOrder(2), problem.weights, once};
  const JetCoefficients refit = wls_fit(offset_problem);
  for (Eigen::Index i = 0; i < problem.size(); ++i) {
    const double target = problem.patch.coords(2, i) + once(2, i);
    CHECK(std::abs(target - evaluate_jet(refit, problem.patch.coords(0, i),
                                         problem.patch.coords(1, i))) < 1e-9);
  }
}

TEST_CASE("reprojection parameter validation") {
  Rng rng(78);
  const FitProblem problem = testing::random_problem(rng, JetOrder(1), 10);
  CHECK_THROWS_AS(reproject_offsets(problem.patch, JetOrder(1), problem.weights, 0, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(reproject_offsets(problem.patch, JetOrder(1), problem.weights, 1, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(reproject_offsets(problem.patch, JetOrder(1), problem.weights, 1, 1.5),
                  std::invalid_argument);
}

TEST_CASE("estimate_normal is equivariant under rigid motion, up to sign") {
  const LabeledCloud labeled = generate_scene(quadric_scene(81));
  const KdTree index = build_index(labeled.cloud);
  const EstimatorConfig config = basic_config(2, 45);

  Rng rng(82);
  const Eigen::Matrix3d rot = testing::random_rotation(rng);
  PointCloud moved;
  moved.points = rot * labeled.cloud.points;
  const KdTree moved_index = build_index(moved);

  for (int q : {3, 77, 240}) {
    const Eigen::Vector3d n0 = estimate_normal(labeled.cloud, index, q, config).normal;
    const Eigen::Vector3d n1 = estimate_normal(moved, moved_index, q, config).normal;
    CHECK(testing::unoriented_angle(rot * n0, n1) < 1e-6);
  }
}

TEST_CASE("tiny clouds fall back instead of crashing") {
  const PointCloud cloud = testing::cloud_from({{0, 0, 0}, {1, 0, 0.1}, {0, 1, -0.2}});
  const KdTree index = build_index(cloud);
  EstimatorConfig config;  // order 3, chain 700/350/175: everything must clamp
  const NormalEstimate est = estimate_normal(cloud, index, 0, config);
  CHECK(est.diagnostics.fallback == FallbackLevel::OrderOne);
  CHECK(std::abs(est.normal.norm() - 1.0) < 1e-10);
}

TEST_CASE("degenerate frames raise for the caller to handle") {
  const PointCloud cloud = testing::cloud_from({{0, 0, 0}, {1, 1, 1}, {2, 2, 2}});
  const KdTree index = build_index(cloud);
  CHECK_THROWS_AS(estimate_normal(cloud, index, 0, EstimatorConfig{}), DegenerateFrameError);
}

TEST_CASE("best order oracle: planes tie at the lowest order") {
  SceneSpec spec;
  spec.surface = PlaneSurface{};
  spec.n_points = 300;
  spec.seed = 91;
  const LabeledCloud labeled = generate_scene(spec);
  const KdTree index = build_index(labeled.cloud);
  const auto [order, error] =
      best_order_oracle(labeled.cloud, index, 10, {1, 2, 3}, basic_config(1, 40));
  CHECK(order.n == 1);
  CHECK(error < 1e-6 * kRad + 1e-9);
}

TEST_CASE("best order oracle never loses to a fixed order") {
  SceneSpec spec;
  spec.surface = CompositeSurface{3, 3.0, 0.2, 5};
  spec.n_points = 900;
  spec.noise_sigma = 0.002;
  spec.seed = 92;
  const LabeledCloud labeled = generate_scene(spec);
  const KdTree index = build_index(labeled.cloud);
  const EstimatorConfig base = basic_config(1, 30);

  for (int q = 0; q < 40; ++q) {
    const auto [order, best] = best_order_oracle(labeled.cloud, index, q, {1, 2, 3}, base);
    for (int o : {1, 2, 3}) {
      EstimatorConfig config = base;
      config.order = JetOrder(o);
      const NormalEstimate est = estimate_normal(labeled.cloud, index, q, config);
      const double err =
          angle_error_deg<double>(est.normal, labeled.cloud.gt_normals.col(q));
      CHECK(best <= err + 1e-12);
    }
  }
}
