#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "jetfit/tangent.hpp"
#include "test_support.hpp"

using namespace jetfit;
using testing::cloud_from;

namespace {

Neighborhood all_of(const PointCloud& cloud, int query) {
  Neighborhood nbhd;
  nbhd.query_index = query;
  for (int i = 0; i < cloud.size(); ++i) nbhd.indices.push_back(i);
  return nbhd;
}

PointCloud grid_on_plane(const Eigen::Vector3d& u, const Eigen::Vector3d& v,
                         const Eigen::Vector3d& origin) {
  std::vector<Eigen::Vector3d> points;
  for (int a = -2; a <= 2; ++a)
    for (int b = -2; b <= 2; ++b) points.push_back(origin + 0.3 * a * u + 0.2 * b * v);
  return cloud_from(points);
}

}  // namespace

TEST_CASE("plane z=0 gives z-axis (0,0,1)") {
  const PointCloud cloud =
      grid_on_plane(Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(), Eigen::Vector3d::Zero());
  const TangentFrame frame = pca_frame(cloud, all_of(cloud, 0));
  CHECK(std::abs(std::abs(frame.rotation(2, 2)) - 1.0) < 1e-12);
  CHECK(frame.origin == cloud.points.col(0));
}

TEST_CASE("plane x+y+z=0 gives z-axis (1,1,1)/sqrt(3)") {
  const Eigen::Vector3d u = Eigen::Vector3d(1, -1, 0).normalized();
  const Eigen::Vector3d v = Eigen::Vector3d(1, 1, -2).normalized();
  const PointCloud cloud = grid_on_plane(u, v, Eigen::Vector3d::Zero());
  const TangentFrame frame = pca_frame(cloud, all_of(cloud, 3));

  const Eigen::Vector3d expected = Eigen::Vector3d::Ones().normalized();
  CHECK(std::abs(frame.rotation.row(2).dot(expected)) == doctest::Approx(1.0).epsilon(1e-10));

  // Eigendecomposition oracle on the covariance built independently.
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (int i = 0; i < cloud.size(); ++i) centroid += cloud.points.col(i);
  centroid /= cloud.size();
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3d d = cloud.points.col(i) - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  const Eigen::Vector3d oracle = eig.eigenvectors().col(0);
  CHECK(std::abs(frame.rotation.row(2).dot(oracle)) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("frames are orthonormal and right-handed") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Eigen::Vector3d> points;
    for (int i = 0; i < 15; ++i) points.push_back(rng.gaussian3());
    const PointCloud cloud = cloud_from(points);
    const TangentFrame frame = pca_frame(cloud, all_of(cloud, 0));
    const Eigen::Matrix3d should_be_identity =
        frame.rotation * frame.rotation.transpose() - Eigen::Matrix3d::Identity();
    CHECK(should_be_identity.cwiseAbs().maxCoeff() < 1e-10);
    CHECK(frame.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("repeated computation is identical, including near-isotropic input") {
  Rng rng(99);
  std::vector<Eigen::Vector3d> points;
  for (int i = 0; i < 200; ++i) points.push_back(rng.unit3());  // sphere: eigenvalues nearly equal
  const PointCloud cloud = cloud_from(points);
  const TangentFrame a = pca_frame(cloud, all_of(cloud, 0));
  const TangentFrame b = pca_frame(cloud, all_of(cloud, 0));
  CHECK(a.rotation == b.rotation);
  CHECK(a.origin == b.origin);
}

TEST_CASE("to_local maps the query to the origin") {
  Rng rng(5);
  std::vector<Eigen::Vector3d> points;
  for (int i = 0; i < 12; ++i) points.push_back(rng.gaussian3());
  const PointCloud cloud = cloud_from(points);
  const Neighborhood nbhd = all_of(cloud, 7);
  const TangentFrame frame = pca_frame(cloud, nbhd);
  const LocalPatch patch = to_local(frame, cloud, nbhd);
  CHECK(patch.coords.col(7).norm() < 1e-15);
}

TEST_CASE("identity frame subtracts the query point") {
  const PointCloud cloud = cloud_from({{1, 2, 3}, {4, 6, 9}});
  TangentFrame frame;
  frame.origin = cloud.points.col(0);
  const LocalPatch patch = to_local(frame, cloud, all_of(cloud, 0));
  CHECK((patch.coords.col(1) - Eigen::Vector3d(3, 4, 6)).norm() < 1e-15);
}

TEST_CASE("world-local round trip is the identity") {
  Rng rng(31);
  std::vector<Eigen::Vector3d> points;
  for (int i = 0; i < 30; ++i) points.push_back(5.0 * rng.gaussian3());
  const PointCloud cloud = cloud_from(points);
  const Neighborhood nbhd = all_of(cloud, 4);
  const TangentFrame frame = pca_frame(cloud, nbhd);
  const LocalPatch patch = to_local(frame, cloud, nbhd);
  for (int i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3d back = to_world(frame, Eigen::Vector3d(patch.coords.col(i)));
    CHECK((back - cloud.points.col(i)).norm() < 1e-9);
  }
}

TEST_CASE("normal_to_world basics") {
  TangentFrame identity;
  CHECK((normal_to_world(identity, Eigen::Vector3d(0, 0, 1)) - Eigen::Vector3d(0, 0, 1)).norm() <
        1e-15);

  // 90 degrees about x: local z maps to world +/- y, as forced by R^T.
  TangentFrame rotated;
  rotated.rotation << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  const Eigen::Vector3d world = normal_to_world(rotated, Eigen::Vector3d(0, 0, 1));
  const Eigen::Vector3d expected = rotated.rotation.transpose() * Eigen::Vector3d(0, 0, 1);
  CHECK((world - expected).norm() < 1e-15);
  CHECK(std::abs(world.y()) == doctest::Approx(1.0));
  CHECK(std::abs(world.x()) < 1e-15);
}

TEST_CASE("normal_to_world preserves the norm") {
  Rng rng(77);
  std::vector<Eigen::Vector3d> points;
  for (int i = 0; i < 10; ++i) points.push_back(rng.gaussian3());
  const PointCloud cloud = cloud_from(points);
  const TangentFrame frame = pca_frame(cloud, all_of(cloud, 0));
  for (int i = 0; i < 25; ++i) {
    const Eigen::Vector3d n = rng.unit3();
    CHECK(std::abs(normal_to_world(frame, n).norm() - 1.0) < 1e-10);
  }
}

TEST_CASE("z-axis minimizes out-of-plane residuals over dense directions") {
  Rng rng(13);
  std::vector<Eigen::Vector3d> points;
  for (int i = 0; i < 25; ++i) {
    Eigen::Vector3d p = rng.gaussian3();
    p.z() *= 0.2;  // flatten so the minimum is well separated
    points.push_back(p);
  }
  const PointCloud cloud = cloud_from(points);
  const TangentFrame frame = pca_frame(cloud, all_of(cloud, 0));

  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (int i = 0; i < cloud.size(); ++i) centroid += cloud.points.col(i);
  centroid /= cloud.size();
  const auto residual_energy = [&](const Eigen::Vector3d& dir) {
    double sum = 0.0;
    for (int i = 0; i < cloud.size(); ++i) {
      const double r = (cloud.points.col(i) - centroid).dot(dir);
      sum += r * r;
    }
    return sum;
  };

  const double along_z = residual_energy(frame.rotation.row(2).transpose());
  for (int s = 0; s < 2000; ++s) {
    const Eigen::Vector3d dir = rng.unit3();
    CHECK(along_z <= residual_energy(dir) + 1e-10);
  }
}

TEST_CASE("degenerate neighborhoods are rejected") {
  const PointCloud two = cloud_from({{0, 0, 0}, {1, 0, 0}});
  CHECK_THROWS_AS(pca_frame(two, all_of(two, 0)), DegenerateFrameError);

  std::vector<Eigen::Vector3d> line;
  for (int i = 0; i < 8; ++i) line.push_back(Eigen::Vector3d(i * 0.5, i * 0.25, -i * 0.1));
  const PointCloud collinear = cloud_from(line);
  CHECK_THROWS_AS(pca_frame(collinear, all_of(collinear, 0)), DegenerateFrameError);

  const PointCloud coincident = cloud_from({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}, {1, 1, 1}});
  CHECK_THROWS_AS(pca_frame(coincident, all_of(coincident, 0)), DegenerateFrameError);
}

TEST_CASE("frame z-axis is equivariant under rigid motion, up to sign") {
  Rng rng(23);
  std::vector<Eigen::Vector3d> points;
  for (int i = 0; i < 20; ++i) {
    Eigen::Vector3d p = rng.gaussian3();
    p.z() *= 0.3;
    points.push_back(p);
  }
  const PointCloud cloud = cloud_from(points);
  const TangentFrame frame = pca_frame(cloud, all_of(cloud, 2));

  const Eigen::Matrix3d rot = testing::random_rotation(rng);
  PointCloud moved = cloud;
  moved.points = rot * cloud.points;
  const TangentFrame moved_frame = pca_frame(moved, all_of(moved, 2));

  const Eigen::Vector3d z_moved = moved_frame.rotation.row(2).transpose();
  const Eigen::Vector3d z_expected = rot * frame.rotation.row(2).transpose();
  CHECK(testing::unoriented_angle(z_moved, z_expected) < 1e-6);
}
