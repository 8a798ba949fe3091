#pragma once

// Deterministic generation of anchor constellations, analytic flight
// trajectories, IMU streams and biased / outlier-corrupted TDOA records with
// their ground truth, plus dataset labeling and splitting.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "uwbtdoa/biasnet.hpp"
#include "uwbtdoa/estimator.hpp"
#include "uwbtdoa/geometry.hpp"
#include "uwbtdoa/tdoa_model.hpp"

namespace uwbtdoa {

/// Axis-aligned flying volume [0, size] per axis.
struct Arena {
  Eigen::Vector3d size{7.0, 8.0, 3.0};

  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= 0.0).all() && (p.array() <= size.array()).all();
  }
};

struct Anchor {
  AnchorId id = 0;
  Posed pose;
};

struct Constellation {
  std::string name;
  std::vector<Anchor> anchors;

  /// Throws kConfiguration on duplicate ids, or on fewer than min_anchors.
  void validate(std::size_t min_anchors = 4) const;
  const Anchor& find(AnchorId id) const;
};

/// Human-readable constellation file:
///   name <label>
///   # id  x  y  z  yaw_deg  pitch_deg  roll_deg
///   0  0.3  0.4  0.2  45  -30  0
/// Orientation is Rz(yaw) * Ry(pitch) * Rx(roll). Fewer than four anchors is
/// accepted but reported through `warning`.
Constellation load_constellation(const std::filesystem::path& path,
                                 std::string* warning = nullptr);
Constellation parse_constellation(std::istream& in, std::string* warning = nullptr);
void save_constellation(const Constellation& c, const std::filesystem::path& path);

/// Eight anchors near the corners of the arena (four low, four high) with
/// jittered positions and random orientations.
Constellation random_constellation(const std::string& name, const Arena& arena,
                                   std::uint64_t seed, int count = 8);

/// A * prod_k sin(2 pi t / period_k + phase_k). With no factors the term is
/// the constant A.
struct SinusoidTerm {
  struct Factor {
    double period = 1.0;
    double phase = 0.0;
  };
  double amplitude = 0.0;
  std::vector<Factor> factors;
};

/// offset + slope * t + sum of terms, with exact first and second
/// derivatives.
struct AxisProfile {
  double offset = 0.0;
  double slope = 0.0;
  std::vector<SinusoidTerm> terms;

  double value(double t) const;
  double rate(double t) const;
  double accel(double t) const;
  /// Sum of |amplitude|; bounds |value - offset - slope * t| for all t.
  double max_excursion() const;
};

struct TrajectorySpec {
  std::array<AxisProfile, 3> position;
  AxisProfile yaw;
  AxisProfile pitch;
  AxisProfile roll;
  double duration = 10.0;
  double sample_rate = 1000.0;
  Arena arena;

  /// Throws kArenaViolation when the position bounds leave the arena,
  /// kConfiguration on bad timing or periods.
  void validate() const;
};

struct TrajectorySample {
  double t = 0.0;
  Posed pose;
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  Eigen::Vector3d acceleration = Eigen::Vector3d::Zero();
  Eigen::Vector3d body_rate = Eigen::Vector3d::Zero();
};

TrajectorySample evaluate_trajectory(const TrajectorySpec& spec, double t);

/// Samples at k / sample_rate for k = 0 .. floor(duration * sample_rate).
std::vector<TrajectorySample> gen_trajectory(const TrajectorySpec& spec);

/// Randomized products of sinusoids filling the arena, with varying yaw and
/// small roll/pitch.
TrajectorySpec random_trajectory_spec(const Arena& arena, double duration,
                                      double sample_rate, std::uint64_t seed);

/// Planar circle at constant height ("A"), optionally with a sinusoidal
/// height ("B") when z_amplitude > 0. Yaw follows the direction of travel.
TrajectorySpec circle_trajectory(const Eigen::Vector3d& center, double radius,
                                 double period, double duration,
                                 double sample_rate, double z_amplitude = 0.0,
                                 double z_period = 5.0, const Arena& arena = {});

struct ImuNoise {
  double accel_density = 0.0;  // m/s^2/sqrt(Hz)
  double gyro_density = 0.0;   // rad/s/sqrt(Hz)
};

/// Ideal specific force and body rate from the trajectory plus white noise
/// with per-sample std density * sqrt(rate).
std::vector<ImuSample> synth_imu(const std::vector<TrajectorySample>& trajectory,
                                 const ImuNoise& noise, double sample_rate,
                                 std::uint64_t seed);

/// Coefficients of the synthetic pose-dependent bias.
struct BiasParams {
  double k1 = 0.15;  // m, anchor radiation pattern
  double k2 = 0.10;  // m, tag radiation pattern
  double k3 = 0.05;  // m, range asymmetry

  static BiasParams zero() { return {0.0, 0.0, 0.0}; }
  double bound() const { return 2.0 * std::abs(k1) + 2.0 * std::abs(k2) + std::abs(k3); }
};

/// Ground-truth bias: a smooth function of the full feature vector,
/// antisymmetric in the anchor pair.
double synth_bias(const Features& chi, const BiasParams& params);

struct OutlierConfig {
  double probability = 0.0;
  double min_shift = 1.0;  // m
  double max_shift = 3.0;  // m
  // Fraction of outliers that shorten instead of lengthen the TDOA.
  double negative_fraction = 0.2;

  void validate() const;
};

struct DatasetRecord {
  double t = 0.0;
  AnchorId anchor_i = 0;
  AnchorId anchor_j = 0;
  double d_raw = 0.0;
  Posed tag;
  double bias_true = 0.0;
  bool is_outlier = false;
};

struct TdoaSynthConfig {
  BiasParams bias;
  double sigma = 0.1;  // m; 0 disables noise
  OutlierConfig outliers;
  double rate = 50.0;  // Hz
  // Explicit anchor-pair schedule; empty means adjacent pairs round-robin
  // (0,1), (1,2), ..., (m-1,0) over the constellation's anchor order.
  std::vector<std::pair<AnchorId, AnchorId>> pairs;
};

struct SynthStats {
  std::size_t skipped_singular = 0;
};

std::vector<DatasetRecord> synth_tdoa(const TrajectorySpec& trajectory,
                                      const Constellation& constellation,
                                      const TdoaSynthConfig& config,
                                      std::uint64_t seed,
                                      SynthStats* stats = nullptr);

/// Noise-free TDOA and features of a record under a constellation.
double record_ideal(const DatasetRecord& r, const Constellation& c);
Features record_features(const DatasetRecord& r, const Constellation& c);

/// Records paired with the constellation they were measured in.
struct RecordGroup {
  const std::vector<DatasetRecord>* records = nullptr;
  const Constellation* constellation = nullptr;
};

struct DatasetSplit {
  LabeledSet train;
  LabeledSet val;
  LabeledSet test;
  std::size_t dropped = 0;  // records over the error threshold
};

/// Labels every record with d_raw - d_ideal, drops |label| > max_error,
/// shuffles with the seed and splits 70/15/15. Throws kEmptyDataset when
/// nothing survives.
DatasetSplit build_dataset(const std::vector<RecordGroup>& groups,
                           FeatureMode mode, std::uint64_t seed,
                           double max_error = 1.0);
DatasetSplit build_dataset(const std::vector<DatasetRecord>& records,
                           const Constellation& constellation, FeatureMode mode,
                           std::uint64_t seed, double max_error = 1.0);

/// Canonical dataset CSV with header
/// t,anchor_i,anchor_j,d_raw,tag_px,tag_py,tag_pz,tag_qw,tag_qx,tag_qy,tag_qz,bias_true,is_outlier
/// and 17-significant-digit floats.
void write_records_csv(const std::vector<DatasetRecord>& records, std::ostream& out);
void write_records_csv(const std::vector<DatasetRecord>& records,
                       const std::filesystem::path& path);
std::vector<DatasetRecord> read_records_csv(std::istream& in);
std::vector<DatasetRecord> read_records_csv(const std::filesystem::path& path);

/// 17-significant-digit decimal form used by every CSV writer.
std::string format_double(double v);

}  // namespace uwbtdoa
