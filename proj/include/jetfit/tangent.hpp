#ifndef JETFIT_TANGENT_HPP
#define JETFIT_TANGENT_HPP

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "jetfit/cloud.hpp"
#include "jetfit/error.hpp"

namespace jetfit {

/// Local orthonormal coordinate system at a query point. Rows of `rotation`
/// are the x/y/z axes; local = rotation * (world - origin).
template <typename Scalar>
struct TangentFrameT {
  Vec3<Scalar> origin = Vec3<Scalar>::Zero();
  Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
};

using TangentFrame = TangentFrameT<double>;

/// A neighborhood expressed in its tangent frame. Coordinates are columns;
/// the query point maps to the origin.
template <typename Scalar>
struct LocalPatchT {
  Mat3X<Scalar> coords;
  TangentFrameT<Scalar> frame;
  Neighborhood source;

  Eigen::Index size() const { return coords.cols(); }
};

using LocalPatch = LocalPatchT<double>;

/// Max distance from the query (frame origin) to a patch point.
template <typename Scalar>
Scalar patch_radius(const LocalPatchT<Scalar>& patch) {
  Scalar r = 0;
  for (Eigen::Index i = 0; i < patch.coords.cols(); ++i)
    r = std::max(r, patch.coords.col(i).norm());
  return r;
}

namespace detail {

/// Flips v so its largest-magnitude component is positive; ties resolved by
/// the first such component. Makes eigenvector signs deterministic.
template <typename Scalar>
Vec3<Scalar> canonical_sign(const Vec3<Scalar>& v) {
  int arg = 0;
  Scalar best = std::abs(v[0]);
  for (int i = 1; i < 3; ++i) {
    if (std::abs(v[i]) > best) {
      best = std::abs(v[i]);
      arg = i;
    }
  }
  return v[arg] < Scalar(0) ? Vec3<Scalar>(-v) : v;
}

}  // namespace detail

/// PCA tangent frame of a neighborhood: covariance about the neighborhood
/// centroid, axes ordered by descending eigenvalue, z-axis along the least
/// variance. The frame origin is the query point, not the centroid.
template <typename Scalar>
TangentFrameT<Scalar> pca_frame(const PointCloudT<Scalar>& cloud, const Neighborhood& nbhd) {
  const Eigen::Index n = nbhd.size();
  if (n < 3) throw DegenerateFrameError("pca_frame: fewer than 3 points");

  Vec3<Scalar> centroid = Vec3<Scalar>::Zero();
  for (int idx : nbhd.indices) centroid += cloud.points.col(idx);
  centroid /= static_cast<Scalar>(n);

  Mat3<Scalar> cov = Mat3<Scalar>::Zero();
  for (int idx : nbhd.indices) {
    const Vec3<Scalar> d = cloud.points.col(idx) - centroid;
    cov += d * d.transpose();
  }
  cov /= static_cast<Scalar>(n);

  Eigen::SelfAdjointEigenSolver<Mat3<Scalar>> eig(cov);
  if (eig.info() != Eigen::Success) throw DegenerateFrameError("pca_frame: eigensolver failed");
  const Vec3<Scalar> evals = eig.eigenvalues();  // ascending
  // Rank < 2 (collinear or coincident points) leaves the tangent plane
  // undefined.
  if (!(evals[1] > Scalar(1e-12) * std::max(evals[2], Scalar(0)) && evals[2] > Scalar(0)))
    throw DegenerateFrameError("pca_frame: rank-deficient covariance");

  TangentFrameT<Scalar> frame;
  frame.origin = cloud.points.col(nbhd.query_index);
  const Vec3<Scalar> x = detail::canonical_sign<Scalar>(eig.eigenvectors().col(2));
  const Vec3<Scalar> z = detail::canonical_sign<Scalar>(eig.eigenvectors().col(0));
  Vec3<Scalar> y = detail::canonical_sign<Scalar>(eig.eigenvectors().col(1));
  if (x.cross(y).dot(z) < Scalar(0)) y = -y;
  frame.rotation.row(0) = x.transpose();
  frame.rotation.row(1) = y.transpose();
  frame.rotation.row(2) = z.transpose();
  return frame;
}

/// Maps the neighborhood into the frame: coords_i = R * (p_i - origin).
template <typename Scalar>
LocalPatchT<Scalar> to_local(const TangentFrameT<Scalar>& frame, const PointCloudT<Scalar>& cloud,
                             const Neighborhood& nbhd) {
  LocalPatchT<Scalar> patch;
  patch.frame = frame;
  patch.source = nbhd;
  patch.coords.resize(3, nbhd.size());
  for (int i = 0; i < nbhd.size(); ++i)
    patch.coords.col(i) = frame.rotation * (cloud.points.col(nbhd.indices[i]) - frame.origin);
  return patch;
}

/// Local point back to world coordinates.
template <typename Scalar>
Vec3<Scalar> to_world(const TangentFrameT<Scalar>& frame, const Vec3<Scalar>& local) {
  return frame.rotation.transpose() * local + frame.origin;
}

/// Direction (no translation) from the local frame back to world.
template <typename Scalar>
Vec3<Scalar> normal_to_world(const TangentFrameT<Scalar>& frame, const Vec3<Scalar>& n_local) {
  return frame.rotation.transpose() * n_local;
}

}  // namespace jetfit

#endif  // JETFIT_TANGENT_HPP
