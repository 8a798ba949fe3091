#include "uwbtdoa/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <openssl/evp.h>

#include "uwbtdoa/error.hpp"
#include "uwbtdoa/random.hpp"

namespace uwbtdoa {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Metrics

ErrorStats ErrorStats::of(const std::vector<double>& values) {
  ErrorStats s;
  s.count = values.size();
  if (values.empty()) {
    return s;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / double(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / double(values.size()));
  return s;
}

MetricsReport compute_metrics(const std::vector<RunLogRow>& log, double warmup) {
  MetricsReport m;
  m.warmup = warmup;
  Eigen::Vector3d sq = Eigen::Vector3d::Zero();
  Eigen::Vector3d inside = Eigen::Vector3d::Zero();
  for (const auto& row : log) {
    if (row.t < warmup) {
      continue;
    }
    const Eigen::Vector3d err = row.estimate - row.truth;
    sq += err.cwiseAbs2();
    for (int i = 0; i < 3; ++i) {
      if (std::abs(err(i)) <= 3.0 * row.sigma(i)) {
        inside(i) += 1.0;
      }
    }
    ++m.steps;
  }
  if (m.steps > 0) {
    const double n = double(m.steps);
    m.rmse_axis = (sq / n).cwiseSqrt();
    m.rmse_total = std::sqrt(sq.sum() / n);
    m.coverage_3sigma = inside / n;
  }
  return m;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) {
    return 0.0;
  }
  const auto mid = v.begin() + std::ptrdiff_t(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

}  // namespace

RunOutput run_simulation(const Constellation& constellation,
                         TrajectorySpec trajectory, const RunOptions& options,
                         const MlpModel* correction, std::uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  constellation.validate(4);
  options.filter_noise.validate();
  options.cost.validate();
  if (!(options.imu_rate > 0.0) || !(options.log_rate > 0.0)) {
    throw Error(ErrorCode::kConfiguration, "rates must be positive");
  }
  if (correction != nullptr) {
    correction->validate();
  }
  trajectory.sample_rate = options.imu_rate;
  const auto truth = gen_trajectory(trajectory);
  const auto imu = synth_imu(truth, options.imu_noise, options.imu_rate,
                             derive_seed(seed, 1));
  const auto records = synth_tdoa(trajectory, constellation, options.tdoa,
                                  derive_seed(seed, 2));

  FilterState state;
  {
    Rng rng(derive_seed(seed, 3));
    std::normal_distribution<double> unit(0.0, 1.0);
    Eigen::Vector3d dp, dv, dth;
    for (int i = 0; i < 3; ++i) dp(i) = unit(rng);
    for (int i = 0; i < 3; ++i) dv(i) = unit(rng);
    for (int i = 0; i < 3; ++i) dth(i) = unit(rng);
    state.position = truth.front().pose.position + options.init_position_std * dp;
    state.velocity = truth.front().velocity + options.init_velocity_std * dv;
    state.attitude =
        truth.front().pose.orientation * so3_exp(Eigen::Vector3d(options.init_attitude_std * dth));
    Vector9d diag;
    diag << Eigen::Vector3d::Constant(options.init_position_std * options.init_position_std),
        Eigen::Vector3d::Constant(options.init_velocity_std * options.init_velocity_std),
        Eigen::Vector3d::Constant(options.init_attitude_std * options.init_attitude_std);
    state.covariance = diag.asDiagonal();
  }

  RunOutput out;
  std::vector<double> before, after, outlier_w, inlier_w, update_us, predict_us;
  std::size_t rejected = 0;
  const auto log_every = std::max<std::size_t>(
      1, std::size_t(std::llround(options.imu_rate / options.log_rate)));
  const double half_step = 0.5 / options.imu_rate;

  std::size_t next_record = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    while (next_record < records.size() &&
           records[next_record].t <= truth[k].t + half_step) {
      const DatasetRecord& rec = records[next_record++];
      const Posed& a_i = constellation.find(rec.anchor_i).pose;
      const Posed& a_j = constellation.find(rec.anchor_j).pose;

      double corrected = rec.d_raw;
      if (correction != nullptr) {
        const Posed estimate{state.position, state.attitude};
        try {
          corrected = correct_measurement(
              rec.d_raw, *correction, extract_features(estimate, a_i, a_j));
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kDegenerateDirection) throw;
        }
      }

      const TdoaMeasurement meas{rec.anchor_i, rec.anchor_j, rec.d_raw, rec.t};
      UpdateResult upd;
      const auto t0 = Clock::now();
      try {
        upd = m_update(state, meas, corrected, a_i, a_j, options.filter_noise,
                       options.cost, options.iterations);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kCovarianceDegenerate) {
          throw Error(e.code(), "covariance degenerate at step " +
                                    std::to_string(k) + " (t=" +
                                    format_double(truth[k].t) + ")");
        }
        throw;
      }
      update_us.push_back(
          std::chrono::duration<double, std::micro>(Clock::now() - t0).count());
      state = upd.state;
      ++out.report.updates;

      const double ideal = tdoa_ideal<double>(rec.tag.position, a_i.position, a_j.position);
      if (rec.is_outlier) {
        outlier_w.push_back(upd.measurement_weight);
        if (upd.measurement_weight < 0.1) ++rejected;
      } else {
        inlier_w.push_back(upd.measurement_weight);
        before.push_back(rec.d_raw - ideal);
        after.push_back(corrected - ideal);
      }
    }

    if (k % log_every == 0) {
      RunLogRow row;
      row.t = truth[k].t;
      row.estimate = state.position;
      row.truth = truth[k].pose.position;
      row.sigma = state.covariance.diagonal().head<3>().cwiseSqrt();
      out.log.push_back(row);
    }

    if (k + 1 < truth.size()) {
      // Trapezoidal input over the interval.
      ImuSample mid;
      mid.accel = 0.5 * (imu[k].accel + imu[k + 1].accel);
      mid.gyro = 0.5 * (imu[k].gyro + imu[k + 1].gyro);
      mid.timestamp = imu[k].timestamp;
      const double dt = truth[k + 1].t - truth[k].t;
      const auto t0 = Clock::now();
      state = predict(state, mid, dt, options.filter_noise);
      predict_us.push_back(
          std::chrono::duration<double, std::micro>(Clock::now() - t0).count());
    }
  }

  const std::size_t updates = out.report.updates;
  out.report = compute_metrics(out.log, options.warmup);
  out.report.updates = updates;
  out.report.measurement_before = ErrorStats::of(before);
  out.report.measurement_after = ErrorStats::of(after);
  out.report.outliers = outlier_w.size();
  out.report.outlier_weight_mean = mean_of(outlier_w);
  out.report.inlier_weight_mean = mean_of(inlier_w);
  out.report.outlier_rejected_fraction =
      outlier_w.empty() ? 0.0 : double(rejected) / double(outlier_w.size());
  out.timing.update_us_median = median(update_us);
  out.timing.predict_us_median = median(predict_us);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate_correction(const MlpModel& model, const LabeledSet& set,
                               int bins, double lo, double hi) {
  model.validate();
  if (set.inputs.rows() != model.input_width()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "input width mismatch: test split has " +
                    std::to_string(set.inputs.rows()) + " features, model expects " +
                    std::to_string(model.input_width()));
  }
  if (bins < 1 || !(hi > lo)) {
    throw Error(ErrorCode::kConfiguration, "histogram needs bins >= 1 and hi > lo");
  }
  EvalResult r;
  std::vector<double> before(std::size_t(set.size())), after(std::size_t(set.size()));
  const Eigen::RowVectorXd pred =
      set.size() > 0 ? forward_batch(model, set.inputs) : Eigen::RowVectorXd();
  for (Eigen::Index k = 0; k < set.size(); ++k) {
    before[std::size_t(k)] = set.labels(k);
    after[std::size_t(k)] = set.labels(k) - pred(k);
  }
  r.before = ErrorStats::of(before);
  r.after = ErrorStats::of(after);

  const double width = (hi - lo) / bins;
  r.bins.resize(std::size_t(bins));
  for (int b = 0; b < bins; ++b) {
    r.bins[std::size_t(b)].lo = lo + b * width;
    r.bins[std::size_t(b)].hi = lo + (b + 1) * width;
  }
  auto bin_of = [&](double v) {
    const auto b = static_cast<long>(std::floor((v - lo) / width));
    return std::size_t(std::clamp<long>(b, 0, bins - 1));
  };
  for (double v : before) ++r.bins[bin_of(v)].before;
  for (double v : after) ++r.bins[bin_of(v)].after;
  return r;
}

// ---------------------------------------------------------------------------
// File helpers

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  }
  return out;
}

void write_json(const json& j, const fs::path& path) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfiguration, path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(ErrorCode::kIo, "cannot create output directory " + dir.string());
  }
}

std::vector<double> split_csv_numbers(const std::string& line, std::size_t line_no) {
  std::vector<double> v;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    char* tail = nullptr;
    const double x = std::strtod(cell.c_str(), &tail);
    if (cell.empty() || tail == cell.c_str()) {
      throw Error(ErrorCode::kInvalidInput,
                  "CSV line " + std::to_string(line_no) + ": bad number");
    }
    v.push_back(x);
  }
  return v;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

void write_labeled_csv(const LabeledSet& set, const fs::path& path) {
  auto out = open_out(path);
  for (Eigen::Index i = 0; i < set.inputs.rows(); ++i) out << 'f' << i << ',';
  out << "label\n";
  for (Eigen::Index k = 0; k < set.size(); ++k) {
    for (Eigen::Index i = 0; i < set.inputs.rows(); ++i) {
      out << format_double(set.inputs(i, k)) << ',';
    }
    out << format_double(set.labels(k)) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

LabeledSet read_labeled_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorCode::kInvalidInput, path.string() + ": empty file");
  }
  const auto columns = std::size_t(std::count(line.begin(), line.end(), ',')) + 1;
  const auto width = Eigen::Index(columns - 1);
  LabeledSet set;
  if (width == kFeatureDim) {
    set.feature_mode = FeatureMode::kFull;
  } else if (width == feature_width(FeatureMode::kPositionOnly)) {
    set.feature_mode = FeatureMode::kPositionOnly;
  } else {
    throw Error(ErrorCode::kDimensionMismatch,
                path.string() + ": unsupported feature width " + std::to_string(width));
  }
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto v = split_csv_numbers(line, line_no);
    if (v.size() != columns) {
      throw Error(ErrorCode::kInvalidInput,
                  path.string() + " line " + std::to_string(line_no) + ": column count");
    }
    rows.push_back(std::move(v));
  }
  set.inputs.resize(width, Eigen::Index(rows.size()));
  set.labels.resize(Eigen::Index(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (Eigen::Index i = 0; i < width; ++i) {
      set.inputs(i, Eigen::Index(k)) = rows[k][std::size_t(i)];
    }
    set.labels(Eigen::Index(k)) = rows[k].back();
  }
  return set;
}

void write_run_log_csv(const std::vector<RunLogRow>& log, const fs::path& path) {
  auto out = open_out(path);
  out << "t,est_x,est_y,est_z,true_x,true_y,true_z,sigma_x,sigma_y,sigma_z\n";
  for (const auto& r : log) {
    out << format_double(r.t);
    for (const Eigen::Vector3d* v : {&r.estimate, &r.truth, &r.sigma}) {
      for (int i = 0; i < 3; ++i) out << ',' << format_double((*v)(i));
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

std::vector<RunLogRow> read_run_log_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<RunLogRow> log;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto v = split_csv_numbers(line, line_no);
    if (v.size() != 10) {
      throw Error(ErrorCode::kInvalidInput, "run log line " + std::to_string(line_no));
    }
    RunLogRow r;
    r.t = v[0];
    r.estimate = {v[1], v[2], v[3]};
    r.truth = {v[4], v[5], v[6]};
    r.sigma = {v[7], v[8], v[9]};
    log.push_back(r);
  }
  return log;
}

json to_json(const MetricsReport& m) {
  auto stats = [](const ErrorStats& s) {
    return json{{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
  };
  return json{
      {"rmse", {{"x", m.rmse_axis.x()}, {"y", m.rmse_axis.y()},
                {"z", m.rmse_axis.z()}, {"total", m.rmse_total}}},
      {"coverage_3sigma", {{"x", m.coverage_3sigma.x()},
                           {"y", m.coverage_3sigma.y()},
                           {"z", m.coverage_3sigma.z()}}},
      {"steps", m.steps},
      {"warmup_s", m.warmup},
      {"updates", m.updates},
      {"measurement_error",
       {{"before", stats(m.measurement_before)}, {"after", stats(m.measurement_after)}}},
      {"outliers",
       {{"count", m.outliers},
        {"outlier_weight_mean", m.outlier_weight_mean},
        {"inlier_weight_mean", m.inlier_weight_mean},
        {"rejected_fraction", m.outlier_rejected_fraction}}},
  };
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIo, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

Arena parse_arena(const json& config) {
  Arena arena;
  if (config.contains("arena")) {
    const auto v = config.at("arena").get<std::vector<double>>();
    if (v.size() != 3) throw Error(ErrorCode::kConfiguration, "arena needs 3 sizes");
    arena.size = {v[0], v[1], v[2]};
  }
  return arena;
}

BiasParams parse_bias(const json& j) {
  BiasParams b;
  if (j.is_string() && j.get<std::string>() == "none") return BiasParams::zero();
  b.k1 = j.value("k1", b.k1);
  b.k2 = j.value("k2", b.k2);
  b.k3 = j.value("k3", b.k3);
  return b;
}

OutlierConfig parse_outliers(const json& j) {
  OutlierConfig o;
  o.probability = j.value("probability", o.probability);
  o.min_shift = j.value("min_shift", o.min_shift);
  o.max_shift = j.value("max_shift", o.max_shift);
  o.negative_fraction = j.value("negative_fraction", o.negative_fraction);
  o.validate();
  return o;
}

TdoaSynthConfig parse_tdoa(const json& j) {
  TdoaSynthConfig t;
  t.sigma = j.value("sigma", t.sigma);
  t.rate = j.value("tdoa_rate", t.rate);
  if (j.contains("bias")) t.bias = parse_bias(j.at("bias"));
  if (j.contains("outliers")) t.outliers = parse_outliers(j.at("outliers"));
  if (j.contains("pairs")) {
    for (const auto& p : j.at("pairs")) {
      t.pairs.emplace_back(p.at(0).get<AnchorId>(), p.at(1).get<AnchorId>());
    }
  }
  return t;
}

RobustCost parse_cost(const std::string& name, double param) {
  RobustCost c;
  if (name == "gm" || name == "geman-mcclure") {
    c = RobustCost::geman_mcclure();
  } else if (name == "huber") {
    c = RobustCost::huber(param > 0.0 ? param : 1.345);
  } else if (name == "cauchy") {
    c = RobustCost::cauchy(param > 0.0 ? param : 2.3849);
  } else if (name == "quadratic") {
    c = RobustCost::quadratic();
  } else {
    throw Error(ErrorCode::kConfiguration, "unknown robust cost '" + name + "'");
  }
  c.validate();
  return c;
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw Error(ErrorCode::kConfiguration, "unknown activation '" + name + "'");
}

template <typename F>
auto with_config_errors(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfiguration, std::string("config: ") + e.what());
  }
}

}  // namespace

FeatureMode parse_feature_mode(const std::string& name) {
  if (name == "full") return FeatureMode::kFull;
  if (name == "no-orientation" || name == "position-only") {
    return FeatureMode::kPositionOnly;
  }
  throw Error(ErrorCode::kConfiguration, "unknown feature mode '" + name + "'");
}

RunOptions parse_run_options(const json& run) {
  return with_config_errors([&] {
    RunOptions o;
    o.imu_rate = run.value("imu_rate", o.imu_rate);
    o.log_rate = run.value("log_rate", o.log_rate);
    o.warmup = run.value("warmup", o.warmup);
    if (run.contains("imu_noise")) {
      const auto& n = run.at("imu_noise");
      o.imu_noise.accel_density = n.value("accel_density", o.imu_noise.accel_density);
      o.imu_noise.gyro_density = n.value("gyro_density", o.imu_noise.gyro_density);
    }
    o.tdoa = parse_tdoa(run);
    const json filter = run.value("filter", json::object());
    o.filter_noise.sigma_uwb = filter.value("sigma_uwb", o.tdoa.sigma > 0.0 ? o.tdoa.sigma : 0.1);
    o.filter_noise.accel_noise_density =
        filter.value("accel_density", o.filter_noise.accel_noise_density);
    o.filter_noise.gyro_noise_density =
        filter.value("gyro_density", o.filter_noise.gyro_noise_density);
    o.cost = parse_cost(filter.value("cost", std::string("gm")), filter.value("param", 0.0));
    o.iterations = filter.value("iterations", o.iterations);
    o.init_position_std = filter.value("init_position_std", o.init_position_std);
    o.init_velocity_std = filter.value("init_velocity_std", o.init_velocity_std);
    o.init_attitude_std = filter.value("init_attitude_std", o.init_attitude_std);
    o.filter_noise.validate();
    return o;
  });
}

TrajectorySpec parse_trajectory(const json& spec, const Arena& arena,
                                double sample_rate, std::uint64_t seed) {
  return with_config_errors([&] {
    const std::string type = spec.value("type", std::string("A"));
    const double duration = spec.value("duration", 30.0);
    if (type == "random") {
      return random_trajectory_spec(arena, duration, sample_rate, seed);
    }
    const auto c = spec.value("center", std::vector<double>{
                                            0.5 * arena.size.x(), 0.5 * arena.size.y(),
                                            0.5 * arena.size.z()});
    if (c.size() != 3) throw Error(ErrorCode::kConfiguration, "center needs 3 values");
    const double radius = spec.value("radius", 1.5);
    const double period = spec.value("period", 8.0);
    double z_amp = 0.0;
    if (type == "B") {
      z_amp = spec.value("z_amplitude", 0.5);
    } else if (type != "A") {
      throw Error(ErrorCode::kConfiguration, "unknown trajectory type '" + type + "'");
    }
    TrajectorySpec t = circle_trajectory({c[0], c[1], c[2]}, radius, period, duration,
                                         sample_rate, z_amp,
                                         spec.value("z_period", 5.0), arena);
    t.validate();
    return t;
  });
}

TrainConfig parse_train_config(const json& train, std::uint64_t seed) {
  return with_config_errors([&] {
    TrainConfig c;
    c.hidden = train.value("hidden", c.hidden);
    c.activation = parse_activation(train.value("activation", std::string("relu")));
    c.batch_size = train.value("batch_size", c.batch_size);
    c.learning_rate = train.value("learning_rate", c.learning_rate);
    c.momentum = train.value("momentum", c.momentum);
    c.max_epochs = train.value("max_epochs", c.max_epochs);
    c.patience = train.value("patience", c.patience);
    c.rng_seed = seed;
    c.validate();
    return c;
  });
}

// ---------------------------------------------------------------------------
// Verbs

void cmd_generate(const json& config, const fs::path& base_dir, std::uint64_t seed,
                  const fs::path& out_dir) {
  const json gen = config.value("generate", json::object());
  const Arena arena = parse_arena(config);
  const auto paths = with_config_errors(
      [&] { return config.at("constellations").get<std::vector<std::string>>(); });
  if (paths.empty()) {
    throw Error(ErrorCode::kConfiguration, "no constellations listed");
  }
  const TdoaSynthConfig tdoa = with_config_errors([&] { return parse_tdoa(gen); });
  const double duration = gen.value("duration", 60.0);
  const int per_constellation = gen.value("trajectories_per_constellation", 1);
  if (per_constellation < 1 || !(duration > 0.0)) {
    throw Error(ErrorCode::kConfiguration, "need >= 1 trajectory of positive duration");
  }

  ensure_dir(out_dir);
  json files = json::array();
  std::map<std::string, int> names;
  for (std::size_t ci = 0; ci < paths.size(); ++ci) {
    const Constellation c = load_constellation(resolve(base_dir, paths[ci]));
    c.validate(4);
    if (names[c.name]++ > 0) {
      throw Error(ErrorCode::kConfiguration, "duplicate constellation name " + c.name);
    }
    std::vector<DatasetRecord> all;
    std::size_t skipped = 0;
    for (int k = 0; k < per_constellation; ++k) {
      const auto stream = std::uint64_t(ci) * 1000 + std::uint64_t(k);
      const TrajectorySpec spec =
          random_trajectory_spec(arena, duration, 100.0, derive_seed(seed, 2 * stream));
      SynthStats stats;
      auto recs = synth_tdoa(spec, c, tdoa, derive_seed(seed, 2 * stream + 1), &stats);
      skipped += stats.skipped_singular;
      for (auto& r : recs) {
        r.t += double(k) * duration;
        all.push_back(r);
      }
    }
    const std::string dataset = c.name + ".csv";
    const std::string constellation_file = c.name + ".constellation.txt";
    write_records_csv(all, out_dir / dataset);
    save_constellation(c, out_dir / constellation_file);
    std::size_t outliers = 0;
    for (const auto& r : all) outliers += r.is_outlier ? 1 : 0;
    files.push_back({{"dataset", dataset},
                     {"constellation", constellation_file},
                     {"records", all.size()},
                     {"outliers", outliers},
                     {"skipped_singular", skipped},
                     {"sha256", sha256_file(out_dir / dataset)}});
  }
  const json manifest{{"config_hash", sha256_hex(config.dump())},
                      {"seed", seed},
                      {"files", files}};
  write_json(manifest, out_dir / "manifest.json");
}

void cmd_train(const json& config, const fs::path& base_dir, std::uint64_t seed,
               const fs::path& out_dir) {
  const json t = config.value("train", json::object());
  const auto manifest_path = resolve(
      base_dir, with_config_errors([&] { return t.at("manifest").get<std::string>(); }));
  const json manifest = read_json(manifest_path);
  const fs::path data_dir = manifest_path.parent_path();

  std::vector<std::vector<DatasetRecord>> records;
  std::vector<Constellation> constellations;
  with_config_errors([&] {
    for (const auto& f : manifest.at("files")) {
      records.push_back(read_records_csv(data_dir / f.at("dataset").get<std::string>()));
      constellations.push_back(
          load_constellation(data_dir / f.at("constellation").get<std::string>()));
    }
    return 0;
  });
  std::vector<RecordGroup> groups;
  for (std::size_t k = 0; k < records.size(); ++k) {
    groups.push_back({&records[k], &constellations[k]});
  }
  const FeatureMode mode = parse_feature_mode(t.value("feature_mode", std::string("full")));
  const DatasetSplit split =
      build_dataset(groups, mode, derive_seed(seed, 11), t.value("max_error", 1.0));
  const TrainConfig tc = parse_train_config(t, seed);
  const TrainResult result = train(split.train, split.val, tc);

  ensure_dir(out_dir);
  save_model(result.model, out_dir / "model.bin");
  {
    auto out = open_out(out_dir / "train_log.csv");
    out << "epoch,train_mse,val_mse\n";
    for (const auto& e : result.history) {
      out << e.epoch << ',' << format_double(e.train_mse) << ','
          << format_double(e.val_mse) << '\n';
    }
  }
  write_labeled_csv(split.test, out_dir / "test_split.csv");
  const json summary{
      {"feature_mode", mode == FeatureMode::kFull ? "full" : "no-orientation"},
      {"train_size", split.train.size()},
      {"val_size", split.val.size()},
      {"test_size", split.test.size()},
      {"dropped", split.dropped},
      {"epochs_run", result.history.size()},
      {"best_epoch", result.best_epoch},
      {"early_stopped", result.early_stopped},
      {"test_mse", mean_squared_error(result.model, split.test)},
  };
  write_json(summary, out_dir / "train_summary.json");
}

void cmd_run(const json& config, const fs::path& base_dir, std::uint64_t seed,
             const fs::path& out_dir) {
  const json run = config.value("run", json::object());
  const Arena arena = parse_arena(config);
  const RunOptions options = parse_run_options(run);
  const Constellation constellation = load_constellation(resolve(
      base_dir, with_config_errors([&] { return run.at("constellation").get<std::string>(); })));
  const TrajectorySpec spec = parse_trajectory(run.value("trajectory", json::object()),
                                               arena, options.imu_rate,
                                               derive_seed(seed, 21));

  const json corr = run.value("correction", json{{"mode", "none"}});
  const std::string mode = with_config_errors(
      [&] { return corr.is_string() ? corr.get<std::string>() : corr.at("mode").get<std::string>(); });
  std::optional<MlpModel> model;
  if (mode == "model" || mode == "no-orientation") {
    model = load_model(resolve(
        base_dir, with_config_errors([&] { return corr.at("model").get<std::string>(); })));
    const FeatureMode want = mode == "model" ? FeatureMode::kFull : FeatureMode::kPositionOnly;
    if (model->feature_mode != want) {
      throw Error(ErrorCode::kConfiguration,
                  "correction mode '" + mode + "' does not match the model's feature width");
    }
  } else if (mode != "none") {
    throw Error(ErrorCode::kConfiguration, "unknown correction mode '" + mode + "'");
  }

  const RunOutput out =
      run_simulation(constellation, spec, options, model ? &*model : nullptr, seed);
  ensure_dir(out_dir);
  write_run_log_csv(out.log, out_dir / "trajectory_log.csv");
  json report = to_json(out.report);
  report["correction"] = mode;
  report["seed"] = seed;
  write_json(report, out_dir / "report.json");
  write_json(json{{"update_us_median", out.timing.update_us_median},
                  {"predict_us_median", out.timing.predict_us_median}},
             out_dir / "timing.json");
}

void cmd_eval(const json& config, const fs::path& base_dir, std::uint64_t seed,
              const fs::path& out_dir) {
  (void)seed;  // evaluation is deterministic without randomness
  const json e = config.value("eval", json::object());
  const MlpModel model = load_model(resolve(
      base_dir, with_config_errors([&] { return e.at("model").get<std::string>(); })));
  const LabeledSet set = read_labeled_csv(resolve(
      base_dir, with_config_errors([&] { return e.at("test_split").get<std::string>(); })));
  const EvalResult r = evaluate_correction(model, set, e.value("bins", 40),
                                           e.value("lo", -0.6), e.value("hi", 0.6));
  ensure_dir(out_dir);
  write_json(json{{"count", r.before.count},
                  {"before", {{"mean", r.before.mean}, {"std", r.before.std}}},
                  {"after", {{"mean", r.after.mean}, {"std", r.after.std}}}},
             out_dir / "eval.json");
  auto out = open_out(out_dir / "histogram.csv");
  out << "bin_lo,bin_hi,count_before,count_after\n";
  for (const auto& b : r.bins) {
    out << format_double(b.lo) << ',' << format_double(b.hi) << ',' << b.before << ','
        << b.after << '\n';
  }
}

}  // namespace uwbtdoa
