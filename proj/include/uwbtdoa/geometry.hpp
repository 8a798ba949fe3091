#pragma once

// Rigid-body helpers and the range/azimuth/elevation features that describe
// the relative pose between a tag and a pair of anchors.

#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "uwbtdoa/error.hpp"

namespace uwbtdoa {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Vector4 = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

inline constexpr int kFeatureDim = 14;

template <typename Scalar>
using FeatureArray = Eigen::Matrix<Scalar, kFeatureDim, 1>;

/// Position plus world-from-body orientation of a tag or anchor.
template <typename Scalar>
struct Pose {
  Vector3<Scalar> position = Vector3<Scalar>::Zero();
  Matrix3<Scalar> orientation = Matrix3<Scalar>::Identity();

  static Pose identity() { return {}; }
  static Pose at(const Vector3<Scalar>& p) {
    return {p, Matrix3<Scalar>::Identity()};
  }
};

using Posed = Pose<double>;

/// Matrix M with M c = c x omega for every c. This is the negated
/// conventional cross-product matrix.
template <typename Derived>
Matrix3<typename Derived::Scalar> skew(const Eigen::MatrixBase<Derived>& omega) {
  using Scalar = typename Derived::Scalar;
  Matrix3<Scalar> m;
  // clang-format off
  m << Scalar(0),  omega(2), -omega(1),
      -omega(2),  Scalar(0),  omega(0),
       omega(1), -omega(0),  Scalar(0);
  // clang-format on
  return m;
}

/// Conventional cross-product matrix: hat(w) c = w x c.
template <typename Derived>
Matrix3<typename Derived::Scalar> hat(const Eigen::MatrixBase<Derived>& w) {
  return -skew(w);
}

/// Closed-form SO(3) exponential Exp(hat(phi)) (Rodrigues). Falls back to the
/// first-order expansion for |phi| < 1e-10.
template <typename Derived>
Matrix3<typename Derived::Scalar> so3_exp(const Eigen::MatrixBase<Derived>& phi) {
  using Scalar = typename Derived::Scalar;
  const Scalar angle = phi.norm();
  if (angle < Scalar(1e-10)) {
    return Matrix3<Scalar>::Identity() + hat(phi);
  }
  const Matrix3<Scalar> k = hat(phi / angle);
  return Matrix3<Scalar>::Identity() + std::sin(angle) * k +
         (Scalar(1) - std::cos(angle)) * k * k;
}

/// One Newton-Schulz polar step; pulls a nearly orthonormal matrix back
/// onto SO(3).
template <typename Scalar>
Matrix3<Scalar> orthonormalize(const Matrix3<Scalar>& r) {
  return Scalar(0.5) * r *
         (Scalar(3) * Matrix3<Scalar>::Identity() - r.transpose() * r);
}

/// Body-rate attitude propagation over dt: R * Exp(hat(omega) dt).
/// A body rate about +z turns the body counter-clockwise seen from +z.
template <typename Scalar>
Matrix3<Scalar> integrate_orientation(const Matrix3<Scalar>& r,
                                      const Vector3<Scalar>& omega, Scalar dt) {
  return orthonormalize<Scalar>(r * so3_exp(omega * dt));
}

/// Rz(yaw) * Ry(pitch) * Rx(roll), angles in radians.
template <typename Scalar>
Matrix3<Scalar> rotation_from_ypr(Scalar yaw, Scalar pitch, Scalar roll) {
  using Axis = Eigen::AngleAxis<Scalar>;
  return (Axis(yaw, Vector3<Scalar>::UnitZ()) *
          Axis(pitch, Vector3<Scalar>::UnitY()) *
          Axis(roll, Vector3<Scalar>::UnitX()))
      .toRotationMatrix();
}

template <typename Scalar>
struct AzimuthElevation {
  Scalar azimuth;    // (-pi, pi], from the body x axis
  Scalar elevation;  // [-pi/2, pi/2], from the body x-y plane, positive up
};

/// Direction of `target` seen from `observer`, in the observer's body frame.
/// Targets straight above or below get azimuth 0.
template <typename Scalar>
AzimuthElevation<Scalar> azimuth_elevation(const Pose<Scalar>& observer,
                                           const Vector3<Scalar>& target) {
  const Vector3<Scalar> v =
      observer.orientation.transpose() * (target - observer.position);
  if (v.squaredNorm() == Scalar(0)) {
    throw Error(ErrorCode::kDegenerateDirection, "degenerate direction");
  }
  const Scalar planar = std::hypot(v.x(), v.y());
  Scalar azimuth = Scalar(0);
  if (planar > Scalar(0)) {
    azimuth = std::atan2(v.y(), v.x());
    if (azimuth <= -std::numbers::pi_v<Scalar>) {
      azimuth = std::numbers::pi_v<Scalar>;
    }
  }
  return {azimuth, std::atan2(v.z(), planar)};
}

/// Relative-pose features for one anchor pair: position differences
/// (anchor minus tag, world frame), then azimuths, then elevations, each
/// ordered [anchor_i, anchor_j, tag->i, tag->j].
template <typename Scalar>
struct FeatureVector {
  Vector3<Scalar> dp_i = Vector3<Scalar>::Zero();
  Vector3<Scalar> dp_j = Vector3<Scalar>::Zero();
  Vector4<Scalar> alpha = Vector4<Scalar>::Zero();
  Vector4<Scalar> beta = Vector4<Scalar>::Zero();

  FeatureArray<Scalar> to_array() const {
    FeatureArray<Scalar> out;
    out << dp_i, dp_j, alpha, beta;
    return out;
  }

  static FeatureVector from_array(const FeatureArray<Scalar>& a) {
    FeatureVector f;
    f.dp_i = a.template segment<3>(0);
    f.dp_j = a.template segment<3>(3);
    f.alpha = a.template segment<4>(6);
    f.beta = a.template segment<4>(10);
    return f;
  }
};

using Features = FeatureVector<double>;

template <typename Scalar>
FeatureVector<Scalar> extract_features(const Pose<Scalar>& tag,
                                       const Pose<Scalar>& anchor_i,
                                       const Pose<Scalar>& anchor_j) {
  FeatureVector<Scalar> f;
  f.dp_i = anchor_i.position - tag.position;
  f.dp_j = anchor_j.position - tag.position;

  const auto anchor_i_view = azimuth_elevation(anchor_i, tag.position);
  const auto anchor_j_view = azimuth_elevation(anchor_j, tag.position);
  const auto tag_i_view = azimuth_elevation(tag, anchor_i.position);
  const auto tag_j_view = azimuth_elevation(tag, anchor_j.position);

  f.alpha << anchor_i_view.azimuth, anchor_j_view.azimuth, tag_i_view.azimuth,
      tag_j_view.azimuth;
  f.beta << anchor_i_view.elevation, anchor_j_view.elevation,
      tag_i_view.elevation, tag_j_view.elevation;
  return f;
}

}  // namespace uwbtdoa
