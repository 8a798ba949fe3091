#pragma once

// Error-state EKF over position, velocity and attitude, driven by IMU
// prediction and updated with one TDOA measurement at a time through an
// iteratively reweighted (M-estimation) update.

#include <optional>

#include <Eigen/Core>

#include "uwbtdoa/biasnet.hpp"
#include "uwbtdoa/geometry.hpp"
#include "uwbtdoa/tdoa_model.hpp"

namespace uwbtdoa {

using Vector9d = Eigen::Matrix<double, 9, 1>;
using Matrix9d = Eigen::Matrix<double, 9, 9>;
using Row9d = Eigen::Matrix<double, 1, 9>;

inline const Eigen::Vector3d kGravity{0.0, 0.0, -9.81};

/// Nominal state plus covariance of the error state [dp, dv, dtheta], with
/// dtheta a right-multiplied attitude perturbation: C_true = C Exp(dtheta).
struct FilterState {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  Eigen::Matrix3d attitude = Eigen::Matrix3d::Identity();  // world-from-body
  Matrix9d covariance = Matrix9d::Identity();
};

/// Adds an error-state correction to the nominal state; the attitude part
/// goes through the exponential map.
FilterState inject_error(const FilterState& state, const Vector9d& dx);

struct ImuSample {
  Eigen::Vector3d accel = Eigen::Vector3d::Zero();  // body specific force
  Eigen::Vector3d gyro = Eigen::Vector3d::Zero();   // body rate
  double timestamp = 0.0;
};

struct RobustCost {
  enum class Kind { kQuadratic, kHuber, kCauchy, kGemanMcClure };

  Kind kind = Kind::kGemanMcClure;
  double param = 0.0;  // Huber delta or Cauchy c

  static RobustCost quadratic() { return {Kind::kQuadratic, 0.0}; }
  static RobustCost huber(double delta) { return {Kind::kHuber, delta}; }
  static RobustCost cauchy(double c) { return {Kind::kCauchy, c}; }
  static RobustCost geman_mcclure() { return {Kind::kGemanMcClure, 0.0}; }

  void validate() const;
};

/// IRLS weight w(e) = rho'(e) / e, with the limit 1 at e = 0.
double robust_weight(const RobustCost& cost, double e);

struct NoiseConfig {
  double accel_noise_density = 0.01;   // m/s^2/sqrt(Hz)
  double gyro_noise_density = 0.001;   // rad/s/sqrt(Hz)
  double sigma_uwb = 0.1;              // m
  // When set, used verbatim as the per-step process noise instead of the
  // density-derived matrix.
  std::optional<Matrix9d> fixed_process_noise;

  void validate() const;
};

/// Discrete process noise for one step of length dt.
Matrix9d process_noise(const NoiseConfig& noise, double dt);

/// One strapdown step: p, v from the gravity-compensated specific force,
/// attitude through the rotation exponential, and P <- F P F^T + Q.
FilterState predict(const FilterState& state, const ImuSample& imu, double dt,
                    const NoiseConfig& noise);

/// Error-state transition matrix of predict().
Matrix9d transition_matrix(const FilterState& state, const ImuSample& imu,
                           double dt);

/// Raw TDOA with the network's bias prediction removed.
double correct_measurement(double d_raw, const MlpModel& model,
                           const Features& chi);

/// Measurement Jacobian with respect to the 9-dim error state. Only the
/// position block is non-zero.
Row9d measurement_jacobian(const Eigen::Vector3d& position,
                           const Eigen::Vector3d& anchor_i,
                           const Eigen::Vector3d& anchor_j);

struct UpdateResult {
  FilterState state;
  double measurement_weight = 1.0;  // final w(e_d)
  double innovation = 0.0;          // d - g(prior)
};

/// Iteratively reweighted update. Starts from the prior (x_0 = prior,
/// unit weights) and at every iteration recomputes the state and measurement
/// weights at the current iterate, rescales the prior covariance through
/// its Cholesky factor, forms the weighted gain and re-solves. After the last
/// iteration the posterior is prior + K (d - g(prior)) with covariance
/// (I - K G) P_rescaled.
UpdateResult m_update(const FilterState& prior, const TdoaMeasurement& meas,
                      double corrected, const Posed& anchor_i,
                      const Posed& anchor_j, const NoiseConfig& noise,
                      const RobustCost& cost, int iterations = 2);

/// Forces exact symmetry: (P + P^T) / 2.
inline Matrix9d symmetrize(const Matrix9d& p) {
  return 0.5 * (p + p.transpose());
}

}  // namespace uwbtdoa
