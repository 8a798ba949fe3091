#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "uwbtdoa/random.hpp"
#include "uwbtdoa/simulator.hpp"

using namespace uwbtdoa;
using std::numbers::pi;

namespace {

Constellation test_constellation() { return random_constellation("t", Arena{}, 11); }

TrajectorySpec hover_spec(double duration = 2.0) {
  TrajectorySpec s;
  s.position[0].offset = 3.0;
  s.position[1].offset = 4.0;
  s.position[2].offset = 1.5;
  s.duration = duration;
  s.sample_rate = 100.0;
  return s;
}

Features random_features(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  Features f;
  for (int i = 0; i < 3; ++i) {
    f.dp_i(i) = u(rng);
    f.dp_j(i) = u(rng);
  }
  for (int i = 0; i < 4; ++i) {
    f.alpha(i) = u(rng);
    f.beta(i) = u(rng) / 2;
  }
  return f;
}

}  // namespace

TEST(Constellation, ParseSaveRoundTrip) {
  std::istringstream in(
      "# comment\nname demo\n0 0.1 0.2 0.3 90 0 0\n1 1 2 3 0 -30 10  # trailing\n"
      "2 4 4 1 0 0 0\n3 6 1 2 45 0 0\n");
  const Constellation c = parse_constellation(in);
  EXPECT_EQ(c.name, "demo");
  ASSERT_EQ(c.anchors.size(), 4u);
  EXPECT_TRUE(c.find(0).pose.orientation.isApprox(rotation_from_ypr(pi / 2, 0.0, 0.0), 1e-15));
  EXPECT_EQ(c.find(1).pose.position, Eigen::Vector3d(1, 2, 3));
  const auto path = std::filesystem::temp_directory_path() / "uwbtdoa_constellation.txt";
  save_constellation(c, path);
  const Constellation back = load_constellation(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.anchors.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_TRUE(back.anchors[k].pose.position.isApprox(c.anchors[k].pose.position, 1e-15));
    EXPECT_TRUE(back.anchors[k].pose.orientation.isApprox(c.anchors[k].pose.orientation, 1e-12));
  }
}

TEST(Constellation, WarnsOnFewAnchorsAndRejectsDuplicates) {
  std::istringstream few("name f\n0 0 0 0 0 0 0\n1 1 0 0 0 0 0\n");
  std::string warning;
  const Constellation c = parse_constellation(few, &warning);
  EXPECT_FALSE(warning.empty());
  EXPECT_THROW(c.validate(4), Error);
  std::istringstream dup("name d\n0 0 0 0 0 0 0\n0 1 0 0 0 0 0\n");
  EXPECT_THROW(parse_constellation(dup), Error);
}

TEST(Constellation, RandomHasEightInsideArena) {
  const Arena arena;
  const Constellation c = random_constellation("r", arena, 3);
  ASSERT_EQ(c.anchors.size(), 8u);
  for (const auto& a : c.anchors) EXPECT_TRUE(arena.contains(a.pose.position));
  EXPECT_NO_THROW(c.validate(4));
}

TEST(SynthBias, SymmetricAndZeroCases) {
  Features f;
  f.dp_i << 1, 2, 0.5;
  f.dp_j << -1, 2, 0.5;
  f.alpha << 0.3, 0.3, -0.7, -0.7;
  f.beta << 0.2, 0.2, 0.4, 0.4;
  EXPECT_EQ(synth_bias(f, BiasParams{}), 0.0);
  Features g;
  g.dp_i << 3, 0, 0;
  g.dp_j << 0, 0, 3;
  EXPECT_EQ(synth_bias(g, BiasParams{}), 0.0);
}

TEST(SynthBias, MatchesScalarFormula) {
  std::mt19937_64 rng(1);
  const BiasParams p{0.15, 0.10, 0.05};
  for (int k = 0; k < 1000; ++k) {
    const Features f = random_features(rng);
    const double ri = std::sqrt(f.dp_i(0) * f.dp_i(0) + f.dp_i(1) * f.dp_i(1) + f.dp_i(2) * f.dp_i(2));
    const double rj = std::sqrt(f.dp_j(0) * f.dp_j(0) + f.dp_j(1) * f.dp_j(1) + f.dp_j(2) * f.dp_j(2));
    const double expect = 0.15 * std::sin(f.beta(0)) * std::cos(f.alpha(0)) -
                          0.15 * std::sin(f.beta(1)) * std::cos(f.alpha(1)) +
                          0.10 * std::sin(2 * f.beta(2)) - 0.10 * std::sin(2 * f.beta(3)) +
                          0.05 * (ri - rj) / (1 + ri + rj);
    EXPECT_NEAR(synth_bias(f, p), expect, 1e-12);
  }
}

TEST(SynthBias, BoundedOverManySamples) {
  std::mt19937_64 rng(2);
  const BiasParams p;
  double worst = 0.0;
  for (int k = 0; k < 1000000; ++k) worst = std::max(worst, std::abs(synth_bias(random_features(rng), p)));
  EXPECT_LE(worst, p.bound());
}

TEST(Trajectory, ZeroAmplitudeHovers) {
  for (const auto& s : gen_trajectory(hover_spec())) {
    EXPECT_EQ(s.pose.position, Eigen::Vector3d(3, 4, 1.5));
    EXPECT_TRUE(s.velocity.isZero(0.0));
    EXPECT_TRUE(s.acceleration.isZero(0.0));
    EXPECT_TRUE(s.body_rate.isZero(0.0));
  }
}

TEST(Trajectory, SingleSinusoidVelocityAmplitude) {
  TrajectorySpec s = hover_spec(4.0);
  s.position[0].terms.push_back({0.5, {{2.0, 0.0}}});
  EXPECT_NEAR(evaluate_trajectory(s, 0.0).velocity.x(), 2 * pi * 0.5 / 2.0, 1e-14);
  EXPECT_NEAR(evaluate_trajectory(s, 0.5).acceleration.x(), -0.5 * std::pow(2 * pi / 2.0, 2), 1e-13);
}

TEST(Trajectory, AnalyticDerivativesMatchDifferences) {
  const double h = 1e-4;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TrajectorySpec s = random_trajectory_spec(Arena{}, 30.0, 100.0, seed);
    for (double t = 0.5; t < 30.0; t += 2.3) {
      const auto a = evaluate_trajectory(s, t - h), b = evaluate_trajectory(s, t + h);
      const auto m = evaluate_trajectory(s, t);
      EXPECT_LT(((b.pose.position - a.pose.position) / (2 * h) - m.velocity).norm(), 1e-6);
      EXPECT_LT(((b.velocity - a.velocity) / (2 * h) - m.acceleration).norm(), 1e-6);
      // Body rate from the orientation derivative: R^T dR/dt = hat(w).
      const Eigen::Matrix3d w_hat =
          m.pose.orientation.transpose() * (b.pose.orientation - a.pose.orientation) / (2 * h);
      EXPECT_LT((Eigen::Vector3d(w_hat(2, 1), w_hat(0, 2), w_hat(1, 0)) - m.body_rate).norm(), 1e-6);
    }
  }
}

TEST(Trajectory, RandomSpecsStayInsideArena) {
  const Arena arena;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const TrajectorySpec s = random_trajectory_spec(arena, 20.0, 50.0, seed);
    EXPECT_NO_THROW(s.validate());
    for (const auto& sample : gen_trajectory(s)) EXPECT_TRUE(arena.contains(sample.pose.position));
  }
}

TEST(Trajectory, ArenaViolationRejected) {
  TrajectorySpec s = hover_spec();
  s.position[2].terms.push_back({2.0, {{3.0, 0.0}}});
  try {
    gen_trajectory(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kArenaViolation);
  }
  EXPECT_THROW(circle_trajectory({1.0, 4.0, 1.5}, 1.5, 8.0, 10.0, 100.0).validate(), Error);
}

TEST(Trajectory, CircleHasConstantSpeedAndTravelYaw) {
  const TrajectorySpec s = circle_trajectory({3.5, 4.0, 1.5}, 1.5, 8.0, 16.0, 100.0);
  for (double t = 0.0; t < 16.0; t += 0.77) {
    const auto m = evaluate_trajectory(s, t);
    EXPECT_NEAR(m.velocity.norm(), 2 * pi * 1.5 / 8.0, 1e-12);
    EXPECT_NEAR(m.pose.position.z(), 1.5, 1e-15);
    const Eigen::Vector3d forward = m.pose.orientation.col(0);
    EXPECT_LT((forward - m.velocity.normalized()).norm(), 1e-12);
  }
}

TEST(Imu, HoverReadsGravityOnly) {
  const auto traj = gen_trajectory(hover_spec());
  for (const auto& imu : synth_imu(traj, ImuNoise{}, 100.0, 1)) {
    EXPECT_TRUE(imu.accel.isApprox(Eigen::Vector3d(0, 0, 9.81), 1e-15));
    EXPECT_TRUE(imu.gyro.isZero(0.0));
  }
}

TEST(Imu, SeededNoiseIsReproducible) {
  const auto traj = gen_trajectory(hover_spec());
  const auto a = synth_imu(traj, ImuNoise{0.1, 0.01}, 100.0, 5);
  const auto b = synth_imu(traj, ImuNoise{0.1, 0.01}, 100.0, 5);
  const auto c = synth_imu(traj, ImuNoise{0.1, 0.01}, 100.0, 6);
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].accel, b[k].accel);
    EXPECT_EQ(a[k].gyro, b[k].gyro);
    differs |= a[k].accel != c[k].accel;
  }
  EXPECT_TRUE(differs);
}

TEST(Imu, DeadReckoningReproducesCircle) {
  const double rate = 1000.0;
  const TrajectorySpec spec = circle_trajectory({3.5, 4.0, 1.5}, 1.5, 8.0, 10.0, rate);
  const auto traj = gen_trajectory(spec);
  const auto imu = synth_imu(traj, ImuNoise{}, rate, 1);
  FilterState s;
  s.position = traj[0].pose.position;
  s.velocity = traj[0].velocity;
  s.attitude = traj[0].pose.orientation;
  s.covariance = 1e-4 * Matrix9d::Identity();
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    ImuSample mid{0.5 * (imu[k].accel + imu[k + 1].accel), 0.5 * (imu[k].gyro + imu[k + 1].gyro),
                  imu[k].timestamp};
    s = predict(s, mid, 1.0 / rate, NoiseConfig{});
    worst = std::max(worst, (s.position - traj[k + 1].pose.position).norm());
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(SynthTdoa, NoiselessUnbiasedEqualsIdeal) {
  const Constellation c = test_constellation();
  TdoaSynthConfig cfg;
  cfg.bias = BiasParams::zero();
  cfg.sigma = 0.0;
  const auto recs = synth_tdoa(random_trajectory_spec(Arena{}, 10.0, 100.0, 1), c, cfg, 2);
  ASSERT_EQ(recs.size(), 501u);
  for (const auto& r : recs) {
    EXPECT_EQ(r.d_raw, record_ideal(r, c));
    EXPECT_FALSE(r.is_outlier);
  }
}

TEST(SynthTdoa, RoundRobinAdjacentPairs) {
  const Constellation c = test_constellation();
  const auto recs = synth_tdoa(hover_spec(1.0), c, TdoaSynthConfig{}, 3);
  const std::size_t m = c.anchors.size();
  for (std::size_t k = 0; k < recs.size(); ++k) {
    EXPECT_EQ(recs[k].anchor_i, c.anchors[k % m].id);
    EXPECT_EQ(recs[k].anchor_j, c.anchors[(k + 1) % m].id);
    EXPECT_NEAR(recs[k].t, double(k) / 50.0, 1e-12);
  }
}

TEST(SynthTdoa, ForcedOutliers) {
  const Constellation c = test_constellation();
  TdoaSynthConfig cfg;
  cfg.outliers.probability = 1.0;
  cfg.outliers.negative_fraction = 0.0;
  cfg.sigma = 0.0;
  const auto recs = synth_tdoa(random_trajectory_spec(Arena{}, 10.0, 100.0, 4), c, cfg, 5);
  for (const auto& r : recs) {
    EXPECT_TRUE(r.is_outlier);
    const double shift = r.d_raw - record_ideal(r, c) - r.bias_true;
    EXPECT_GE(shift, 1.0 - 1e-12);
    EXPECT_LE(shift, 3.0 + 1e-12);
  }
}

TEST(SynthTdoa, NoiseMomentsAndFlagSoundness) {
  const Constellation c = test_constellation();
  TdoaSynthConfig cfg;
  cfg.outliers.probability = 0.05;
  std::vector<double> res;
  std::size_t outliers = 0;
  for (std::uint64_t seed = 0; res.size() < 100000; ++seed) {
    const auto recs = synth_tdoa(random_trajectory_spec(Arena{}, 100.0, 100.0, seed), c, cfg,
                                 derive_seed(seed, 9));
    for (const auto& r : recs) {
      const double e = r.d_raw - record_ideal(r, c) - r.bias_true;
      EXPECT_LE(std::abs(r.d_raw), (c.find(r.anchor_i).pose.position - c.find(r.anchor_j).pose.position).norm() + 5.0);
      if (r.is_outlier) {
        ++outliers;
        continue;
      }
      EXPECT_LE(std::abs(e), 6 * cfg.sigma);
      res.push_back(e);
    }
  }
  double mean = 0.0;
  for (double e : res) mean += e;
  mean /= double(res.size());
  double var = 0.0;
  for (double e : res) var += (e - mean) * (e - mean);
  const double std = std::sqrt(var / double(res.size()));
  EXPECT_NEAR(std, 0.1, 0.005);
  EXPECT_GT(outliers, 0u);
}

TEST(SynthTdoa, DeterministicPerSeed) {
  const Constellation c = test_constellation();
  TdoaSynthConfig cfg;
  cfg.outliers.probability = 0.1;
  const TrajectorySpec spec = random_trajectory_spec(Arena{}, 20.0, 100.0, 7);
  std::ostringstream a, b;
  write_records_csv(synth_tdoa(spec, c, cfg, 8), a);
  write_records_csv(synth_tdoa(spec, c, cfg, 8), b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(SynthTdoa, RejectsBadConfig) {
  const Constellation c = test_constellation();
  TdoaSynthConfig cfg;
  cfg.outliers.probability = 1.5;
  EXPECT_THROW(synth_tdoa(hover_spec(), c, cfg, 1), Error);
  cfg = TdoaSynthConfig{};
  cfg.sigma = -0.1;
  EXPECT_THROW(synth_tdoa(hover_spec(), c, cfg, 1), Error);
  cfg = TdoaSynthConfig{};
  cfg.pairs = {{0, 0}};
  EXPECT_THROW(synth_tdoa(hover_spec(), c, cfg, 1), Error);
}

TEST(SynthTdoa, SingularGeometrySkipped) {
  Constellation c = test_constellation();
  c.anchors[0].pose.position = {3.0, 4.0, 1.5};  // the hover point
  SynthStats stats;
  const auto recs = synth_tdoa(hover_spec(1.0), c, TdoaSynthConfig{}, 1, &stats);
  EXPECT_GT(stats.skipped_singular, 0u);
  EXPECT_EQ(recs.size() + stats.skipped_singular, 51u);
}

TEST(BuildDataset, SplitSizesAndLabels) {
  const Constellation c = test_constellation();
  TdoaSynthConfig cfg;
  cfg.sigma = 0.0;
  auto recs = synth_tdoa(random_trajectory_spec(Arena{}, 19.98, 100.0, 3), c, cfg, 4);
  ASSERT_EQ(recs.size(), 1000u);
  const DatasetSplit s = build_dataset(recs, c, FeatureMode::kFull, 5);
  EXPECT_EQ(s.train.size(), 700);
  EXPECT_EQ(s.val.size(), 150);
  EXPECT_EQ(s.test.size(), 150);
  EXPECT_EQ(s.dropped, 0u);
  // Noiseless labels are exactly the bias (up to the ideal's rounding).
  std::vector<double> biases;
  for (const auto& r : recs) biases.push_back(r.bias_true);
  std::sort(biases.begin(), biases.end());
  std::vector<double> labels;
  for (const LabeledSet* set : {&s.train, &s.val, &s.test})
    for (Eigen::Index k = 0; k < set->size(); ++k) labels.push_back(set->labels(k));
  std::sort(labels.begin(), labels.end());
  for (std::size_t k = 0; k < labels.size(); ++k) EXPECT_NEAR(labels[k], biases[k], 1e-12);
}

TEST(BuildDataset, DropsLargeErrors) {
  const Constellation c = test_constellation();
  TdoaSynthConfig cfg;
  cfg.sigma = 0.0;
  auto recs = synth_tdoa(hover_spec(1.0), c, cfg, 1);
  recs[3].d_raw += 2.0;
  const DatasetSplit s = build_dataset(recs, c, FeatureMode::kPositionOnly, 2);
  EXPECT_EQ(s.dropped, 1u);
  EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), Eigen::Index(recs.size() - 1));
  EXPECT_EQ(s.train.inputs.rows(), 6);
  for (auto& r : recs) r.d_raw += 5.0;
  try {
    build_dataset(recs, c, FeatureMode::kFull, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyDataset);
  }
}

TEST(RecordsCsv, RoundTripIsExact) {
  const Constellation c = test_constellation();
  TdoaSynthConfig cfg;
  cfg.outliers.probability = 0.2;
  const auto recs = synth_tdoa(random_trajectory_spec(Arena{}, 5.0, 100.0, 9), c, cfg, 10);
  std::stringstream buf;
  write_records_csv(recs, buf);
  const std::string text = buf.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "t,anchor_i,anchor_j,d_raw,tag_px,tag_py,tag_pz,tag_qw,tag_qx,tag_qy,tag_qz,"
            "bias_true,is_outlier");
  const auto back = read_records_csv(buf);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t k = 0; k < recs.size(); ++k) {
    EXPECT_EQ(back[k].t, recs[k].t);
    EXPECT_EQ(back[k].d_raw, recs[k].d_raw);
    EXPECT_EQ(back[k].bias_true, recs[k].bias_true);
    EXPECT_EQ(back[k].is_outlier, recs[k].is_outlier);
    EXPECT_EQ(back[k].tag.position, recs[k].tag.position);
    EXPECT_LT((back[k].tag.orientation - recs[k].tag.orientation).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(RecordsCsv, RejectsMalformed) {
  std::istringstream bad_header("t,x\n");
  EXPECT_THROW(read_records_csv(bad_header), Error);
  std::istringstream short_row(
      "t,anchor_i,anchor_j,d_raw,tag_px,tag_py,tag_pz,tag_qw,tag_qx,tag_qy,tag_qz,bias_true,"
      "is_outlier\n0,1,2\n");
  EXPECT_THROW(read_records_csv(short_row), Error);
}

TEST(FormatDouble, SeventeenDigits) {
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(format_double(2.0), "2");
  EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);
}
