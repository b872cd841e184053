#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "jetfit/eval.hpp"
#include "jetfit/io.hpp"
#include "test_support.hpp"

using namespace jetfit;

TEST_CASE("angle error basics") {
  const Eigen::Vector3d z = Eigen::Vector3d::UnitZ();
  CHECK(angle_error_deg<double>(z, z) == 0.0);
  CHECK(angle_error_deg<double>(-z, z) == 0.0);  // unoriented
  CHECK(angle_error_deg<double>(Eigen::Vector3d::UnitX(), z) == doctest::Approx(90.0));
  CHECK(angle_error_deg<double>(z, Eigen::Vector3d::UnitX()) == doctest::Approx(90.0));

  const Eigen::Vector3d tilted(std::sin(0.3), 0.0, std::cos(0.3));
  CHECK(angle_error_deg<double>(tilted, z) == doctest::Approx(0.3 * kRadToDeg).epsilon(1e-10));
  CHECK(angle_error_deg<double>(tilted, z) == angle_error_deg<double>(z, tilted));

  CHECK_THROWS_AS(angle_error_deg<double>(Eigen::Vector3d(0, 0, 2), z), std::invalid_argument);
}

TEST_CASE("rmse") {
  CHECK(rmse_deg({0.0, 0.0, 0.0}) == 0.0);
  CHECK(rmse_deg({5.5}) == 5.5);
  CHECK(rmse_deg({3.0, 4.0}) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-12));
  CHECK(rmse_deg({3.0, 4.0}) == doctest::Approx(3.5355339).epsilon(1e-6));
  CHECK_THROWS_AS(rmse_deg({}), std::invalid_argument);

  Rng rng(42);
  std::vector<double> errors;
  for (int i = 0; i < 100; ++i) errors.push_back(rng.uniform(0, 90));
  CHECK(rmse_deg(errors) >= mean_abs_deg(errors));
}

TEST_CASE("auc curve") {
  const AucCurve zero = auc_curve({0.0, 0.0, 0.0}, default_auc_thresholds());
  for (double f : zero.fractions) CHECK(f == 1.0);

  Rng rng(7);
  std::vector<double> uniform;
  for (int i = 0; i < 20000; ++i) uniform.push_back(rng.uniform(0.0, 90.0));
  std::vector<double> thresholds;
  for (double t = 0.0; t <= 90.0; t += 5.0) thresholds.push_back(t);
  const AucCurve curve = auc_curve(uniform, thresholds);
  for (std::size_t i = 0; i < curve.thresholds_deg.size(); ++i)
    CHECK(curve.fractions[i] == doctest::Approx(curve.thresholds_deg[i] / 90.0).epsilon(0.03));
  CHECK(curve.fractions.back() == 1.0);  // everything below 90 degrees
  for (std::size_t i = 1; i < curve.fractions.size(); ++i)
    CHECK(curve.fractions[i] >= curve.fractions[i - 1]);

  CHECK_THROWS_AS(auc_curve({1.0}, {5.0, 1.0}), std::invalid_argument);
}

TEST_CASE("color ramp endpoints") {
  const auto at0 = error_color(0.0);
  CHECK(at0[0] == 0);
  CHECK(at0[1] == 0);
  CHECK(at0[2] == 255);
  const auto at60 = error_color(60.0);
  CHECK(at60[0] == 255);
  CHECK(at60[2] == 0);
  const auto beyond = error_color(89.0);  // clamps at the 60-degree end
  CHECK(beyond[0] == 255);
  CHECK(beyond[2] == 0);
}

TEST_CASE("error map round-trips through the PLY reader") {
  Rng rng(9);
  std::vector<Eigen::Vector3d> points;
  std::vector<double> errors;
  for (int i = 0; i < 50; ++i) {
    points.push_back(rng.gaussian3());
    errors.push_back(rng.uniform(0.0, 90.0));
  }
  const PointCloud cloud = testing::cloud_from(points);

  const std::string path =
      (std::filesystem::temp_directory_path() / "jetfit_test_errmap.ply").string();
  write_error_map_ply(cloud, errors, path);
  const PlyCloud loaded = read_ply(path);
  REQUIRE(loaded.positions.cols() == 50);
  for (int i = 0; i < 50; ++i) {
    for (int r = 0; r < 3; ++r)
      CHECK(loaded.positions(r, i) == static_cast<float>(cloud.points(r, i)));
    CHECK(loaded.colors.col(i) == error_color(errors[static_cast<std::size_t>(i)]));
  }
  std::filesystem::remove(path);

  std::vector<double> short_errors(10, 0.0);
  CHECK_THROWS_AS(write_error_map_ply(cloud, short_errors, path), std::invalid_argument);
}
