#pragma once

#include "uwbtdoa/geometry.hpp"

namespace uwbtdoa {

using AnchorId = int;

/// One range-difference sample: distance to anchor_i minus distance to
/// anchor_j, in meters.
struct TdoaMeasurement {
  AnchorId anchor_i = 0;
  AnchorId anchor_j = 1;
  double value = 0.0;
  double timestamp = 0.0;
};

/// Two-way-ranging distance. Kept as a reference for tests.
template <typename Scalar>
Scalar twr_range(const Vector3<Scalar>& p, const Vector3<Scalar>& a) {
  return (p - a).norm();
}

namespace detail {
template <typename Scalar>
void require_distinct(const Vector3<Scalar>& p, const Vector3<Scalar>& a_i,
                      const Vector3<Scalar>& a_j) {
  if ((p - a_i).squaredNorm() == Scalar(0) ||
      (p - a_j).squaredNorm() == Scalar(0)) {
    throw Error(ErrorCode::kSingularGeometry, "singular geometry");
  }
}
}  // namespace detail

/// Noise-free TDOA: |p - a_i| - |p - a_j|.
template <typename Scalar>
Scalar tdoa_ideal(const Vector3<Scalar>& p, const Vector3<Scalar>& a_i,
                  const Vector3<Scalar>& a_j) {
  detail::require_distinct(p, a_i, a_j);
  return (p - a_i).norm() - (p - a_j).norm();
}

/// Gradient of tdoa_ideal with respect to the tag position, as a row.
template <typename Scalar>
Eigen::Matrix<Scalar, 1, 3> tdoa_jacobian(const Vector3<Scalar>& p,
                                          const Vector3<Scalar>& a_i,
                                          const Vector3<Scalar>& a_j) {
  detail::require_distinct(p, a_i, a_j);
  return ((p - a_i).normalized() - (p - a_j).normalized()).transpose();
}

}  // namespace uwbtdoa
