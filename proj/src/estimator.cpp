#include "uwbtdoa/estimator.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>

#include "uwbtdoa/error.hpp"

namespace uwbtdoa {
namespace {

// Keeps rescaled covariances finite when a residual drives a weight to ~0.
constexpr double kMinWeight = 1e-9;

}  // namespace

FilterState inject_error(const FilterState& state, const Vector9d& dx) {
  FilterState out = state;
  out.position += dx.segment<3>(0);
  out.velocity += dx.segment<3>(3);
  out.attitude = orthonormalize<double>(
      state.attitude * so3_exp(Eigen::Vector3d(dx.segment<3>(6))));
  return out;
}

void RobustCost::validate() const {
  if ((kind == Kind::kHuber || kind == Kind::kCauchy) && !(param > 0.0)) {
    throw Error(ErrorCode::kConfiguration,
                "robust cost parameter must be positive");
  }
}

double robust_weight(const RobustCost& cost, double e) {
  switch (cost.kind) {
    case RobustCost::Kind::kQuadratic:
      return 1.0;
    case RobustCost::Kind::kHuber: {
      const double a = std::abs(e);
      return a <= cost.param ? 1.0 : cost.param / a;
    }
    case RobustCost::Kind::kCauchy: {
      const double r = e / cost.param;
      return 1.0 / (1.0 + r * r);
    }
    case RobustCost::Kind::kGemanMcClure: {
      const double d = 1.0 + e * e;
      return 1.0 / (d * d);
    }
  }
  return 1.0;
}

void NoiseConfig::validate() const {
  if (!(sigma_uwb > 0.0)) {
    throw Error(ErrorCode::kConfiguration, "sigma_uwb must be positive");
  }
  if (accel_noise_density < 0.0 || gyro_noise_density < 0.0) {
    throw Error(ErrorCode::kConfiguration, "noise densities must be >= 0");
  }
}

Matrix9d process_noise(const NoiseConfig& noise, double dt) {
  if (noise.fixed_process_noise) {
    return *noise.fixed_process_noise;
  }
  const double qa = noise.accel_noise_density * noise.accel_noise_density;
  const double qg = noise.gyro_noise_density * noise.gyro_noise_density;
  const Eigen::Matrix3d eye = Eigen::Matrix3d::Identity();
  Matrix9d q = Matrix9d::Zero();
  // Integrated white acceleration noise into (p, v); white rate noise into
  // the attitude error.
  q.block<3, 3>(0, 0) = qa * dt * dt * dt / 3.0 * eye;
  q.block<3, 3>(0, 3) = qa * dt * dt / 2.0 * eye;
  q.block<3, 3>(3, 0) = qa * dt * dt / 2.0 * eye;
  q.block<3, 3>(3, 3) = qa * dt * eye;
  q.block<3, 3>(6, 6) = qg * dt * eye;
  return q;
}

namespace {

void check_step(const ImuSample& imu, double dt) {
  if (!imu.accel.allFinite() || !imu.gyro.allFinite()) {
    throw Error(ErrorCode::kInvalidInput, "invalid input: non-finite IMU sample");
  }
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw Error(ErrorCode::kInvalidStep, "invalid step: dt must be positive");
  }
}

}  // namespace

Matrix9d transition_matrix(const FilterState& state, const ImuSample& imu,
                           double dt) {
  const Eigen::Matrix3d half_turn = so3_exp(Eigen::Vector3d(imu.gyro * (0.5 * dt)));
  const Eigen::Matrix3d mid_attitude = state.attitude * half_turn;
  const Eigen::Matrix3d accel_sens =
      -mid_attitude * hat(imu.accel) * half_turn.transpose();

  Matrix9d f = Matrix9d::Identity();
  f.block<3, 3>(0, 3) = dt * Eigen::Matrix3d::Identity();
  f.block<3, 3>(0, 6) = 0.5 * dt * dt * accel_sens;
  f.block<3, 3>(3, 6) = dt * accel_sens;
  f.block<3, 3>(6, 6) = so3_exp(Eigen::Vector3d(imu.gyro * dt)).transpose();
  return f;
}

FilterState predict(const FilterState& state, const ImuSample& imu, double dt,
                    const NoiseConfig& noise) {
  check_step(imu, dt);
  // Specific force is rotated with the mid-step attitude; this equals the
  // plain start-attitude form when the body does not rotate and keeps the
  // step second-order accurate when it does.
  const Eigen::Matrix3d mid_attitude =
      state.attitude * so3_exp(Eigen::Vector3d(imu.gyro * (0.5 * dt)));
  const Eigen::Vector3d accel_world = mid_attitude * imu.accel + kGravity;

  FilterState out;
  out.position = state.position + state.velocity * dt + 0.5 * accel_world * dt * dt;
  out.velocity = state.velocity + accel_world * dt;
  out.attitude = integrate_orientation<double>(state.attitude, imu.gyro, dt);

  const Matrix9d f = transition_matrix(state, imu, dt);
  out.covariance =
      symmetrize(f * state.covariance * f.transpose() + process_noise(noise, dt));
  return out;
}

double correct_measurement(double d_raw, const MlpModel& model,
                           const Features& chi) {
  return d_raw - forward(model, chi);
}

Row9d measurement_jacobian(const Eigen::Vector3d& position,
                           const Eigen::Vector3d& anchor_i,
                           const Eigen::Vector3d& anchor_j) {
  Row9d g = Row9d::Zero();
  g.segment<3>(0) = tdoa_jacobian<double>(position, anchor_i, anchor_j);
  return g;
}

UpdateResult m_update(const FilterState& prior, const TdoaMeasurement& meas,
                      double corrected, const Posed& anchor_i,
                      const Posed& anchor_j, const NoiseConfig& noise,
                      const RobustCost& cost, int iterations) {
  if (iterations < 1) {
    throw Error(ErrorCode::kConfiguration, "IRLS iterations must be >= 1");
  }
  if (!std::isfinite(corrected)) {
    throw Error(ErrorCode::kInvalidInput, "invalid input: non-finite TDOA");
  }
  if (meas.anchor_i == meas.anchor_j) {
    throw Error(ErrorCode::kInvalidInput, "invalid input: anchor pair repeats");
  }

  const Eigen::LLT<Matrix9d> llt(prior.covariance);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kCovarianceDegenerate, "covariance degenerate");
  }
  const Matrix9d chol = llt.matrixL();

  const Eigen::Vector3d& a_i = anchor_i.position;
  const Eigen::Vector3d& a_j = anchor_j.position;
  // Linearized once at the prior, so unit weights reproduce the plain EKF
  // for any iteration count.
  const Row9d g = measurement_jacobian(prior.position, a_i, a_j);
  const double innovation =
      corrected - tdoa_ideal<double>(prior.position, a_i, a_j);
  const double sigma2 = noise.sigma_uwb * noise.sigma_uwb;

  Vector9d dx = Vector9d::Zero();
  Vector9d gain = Vector9d::Zero();
  Matrix9d rescaled = prior.covariance;
  double w_d = 1.0;

  for (int l = 0; l < iterations; ++l) {
    const Vector9d e_x = chol.triangularView<Eigen::Lower>().solve(dx);
    const Eigen::Vector3d p_l = prior.position + dx.segment<3>(0);
    const double e_d =
        (corrected - tdoa_ideal<double>(p_l, a_i, a_j)) / noise.sigma_uwb;

    Vector9d inv_w_x;
    for (int i = 0; i < 9; ++i) {
      inv_w_x(i) = 1.0 / std::max(robust_weight(cost, e_x(i)), kMinWeight);
    }
    w_d = std::max(robust_weight(cost, e_d), kMinWeight);

    rescaled = chol * inv_w_x.asDiagonal() * chol.transpose();
    const double sigma2_tilde = sigma2 / w_d;
    const Vector9d pg = rescaled * g.transpose();
    gain = pg / (g.dot(pg) + sigma2_tilde);
    dx = gain * innovation;
  }

  UpdateResult result;
  result.state = inject_error(prior, dx);
  result.state.covariance =
      symmetrize((Matrix9d::Identity() - gain * g) * rescaled);
  result.measurement_weight = w_d;
  result.innovation = innovation;
  return result;
}

}  // namespace uwbtdoa
