#pragma once

// Closed-loop simulation runs, metrics, and the four command verbs
// (generate / train / run / eval) operating on JSON experiment configs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uwbtdoa/biasnet.hpp"
#include "uwbtdoa/estimator.hpp"
#include "uwbtdoa/simulator.hpp"

namespace uwbtdoa {

struct RunOptions {
  double imu_rate = 1000.0;  // Hz; prediction runs once per IMU interval
  double log_rate = 100.0;   // Hz
  double warmup = 1.0;       // s excluded from the metrics
  ImuNoise imu_noise{0.01, 0.001};
  TdoaSynthConfig tdoa;  // measurement generation (bias, noise, outliers)
  // Inflated well above the simulated IMU noise; the nominal densities leave
  // the filter overconfident once attitude errors leak into position.
  NoiseConfig filter_noise{.accel_noise_density = 0.1, .gyro_noise_density = 0.01};
  RobustCost cost = RobustCost::geman_mcclure();
  int iterations = 2;
  double init_position_std = 0.1;
  double init_velocity_std = 0.05;
  double init_attitude_std = 0.02;
};

/// One logged filter step.
struct RunLogRow {
  double t = 0.0;
  Eigen::Vector3d estimate = Eigen::Vector3d::Zero();
  Eigen::Vector3d truth = Eigen::Vector3d::Zero();
  Eigen::Vector3d sigma = Eigen::Vector3d::Zero();  // sqrt of diag(P_pos)
};

struct ErrorStats {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;

  static ErrorStats of(const std::vector<double>& values);
};

struct MetricsReport {
  Eigen::Vector3d rmse_axis = Eigen::Vector3d::Zero();
  double rmse_total = 0.0;
  Eigen::Vector3d coverage_3sigma = Eigen::Vector3d::Zero();
  std::size_t steps = 0;
  double warmup = 0.0;
  // Inlier TDOA errors against the true pose, before and after correction.
  ErrorStats measurement_before;
  ErrorStats measurement_after;
  std::size_t updates = 0;
  std::size_t outliers = 0;
  double outlier_weight_mean = 0.0;
  double inlier_weight_mean = 0.0;
  double outlier_rejected_fraction = 0.0;  // outliers given weight < 0.1
};

struct TimingStats {
  double update_us_median = 0.0;
  double predict_us_median = 0.0;
};

struct RunOutput {
  std::vector<RunLogRow> log;
  MetricsReport report;
  TimingStats timing;
};

/// RMSE and 3-sigma coverage over log rows with t >= warmup.
MetricsReport compute_metrics(const std::vector<RunLogRow>& log, double warmup);

/// Simulates IMU and TDOA streams for the trajectory, then runs the filter
/// with optional bias correction. Features for the correction are built
/// from the filter's own pose estimate. Deterministic in `seed`.
RunOutput run_simulation(const Constellation& constellation,
                         TrajectorySpec trajectory, const RunOptions& options,
                         const MlpModel* correction, std::uint64_t seed);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t before = 0;
  std::size_t after = 0;
};

struct EvalResult {
  ErrorStats before;
  ErrorStats after;
  std::vector<HistogramBin> bins;  // values outside the range go to the end bins
};

/// Residual statistics of labels before and after subtracting the model's
/// prediction. Throws kDimensionMismatch when widths disagree.
EvalResult evaluate_correction(const MlpModel& model, const LabeledSet& set,
                               int bins = 40, double lo = -0.6, double hi = 0.6);

/// CSV with header f0..f{w-1},label.
void write_labeled_csv(const LabeledSet& set, const std::filesystem::path& path);
LabeledSet read_labeled_csv(const std::filesystem::path& path);

void write_run_log_csv(const std::vector<RunLogRow>& log,
                       const std::filesystem::path& path);
std::vector<RunLogRow> read_run_log_csv(const std::filesystem::path& path);

nlohmann::json to_json(const MetricsReport& report);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

// Command verbs. Relative paths inside `config` resolve against base_dir.
// Each writes only under out_dir and throws uwbtdoa::Error on failure.
void cmd_generate(const nlohmann::json& config, const std::filesystem::path& base_dir,
                  std::uint64_t seed, const std::filesystem::path& out_dir);
void cmd_train(const nlohmann::json& config, const std::filesystem::path& base_dir,
               std::uint64_t seed, const std::filesystem::path& out_dir);
void cmd_run(const nlohmann::json& config, const std::filesystem::path& base_dir,
             std::uint64_t seed, const std::filesystem::path& out_dir);
void cmd_eval(const nlohmann::json& config, const std::filesystem::path& base_dir,
              std::uint64_t seed, const std::filesystem::path& out_dir);

/// Parsers shared by the verbs, exposed for tests.
RunOptions parse_run_options(const nlohmann::json& run);
TrajectorySpec parse_trajectory(const nlohmann::json& spec, const Arena& arena,
                                double sample_rate, std::uint64_t seed);
TrainConfig parse_train_config(const nlohmann::json& train, std::uint64_t seed);
FeatureMode parse_feature_mode(const std::string& name);

}  // namespace uwbtdoa
