#include "uwbtdoa/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Geometry>

#include "uwbtdoa/error.hpp"
#include "uwbtdoa/random.hpp"

namespace uwbtdoa {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

}  // namespace

// ---------------------------------------------------------------------------
// Constellations

void Constellation::validate(std::size_t min_anchors) const {
  std::set<AnchorId> ids;
  for (const auto& a : anchors) {
    if (!ids.insert(a.id).second) {
      throw Error(ErrorCode::kConfiguration,
                  "duplicate anchor id " + std::to_string(a.id));
    }
    if (!a.pose.position.allFinite() || !a.pose.orientation.allFinite()) {
      throw Error(ErrorCode::kConfiguration, "non-finite anchor pose");
    }
  }
  if (anchors.size() < min_anchors) {
    throw Error(ErrorCode::kConfiguration,
                "constellation '" + name + "' has " +
                    std::to_string(anchors.size()) + " anchors, need " +
                    std::to_string(min_anchors));
  }
}

const Anchor& Constellation::find(AnchorId id) const {
  for (const auto& a : anchors) {
    if (a.id == id) {
      return a;
    }
  }
  throw Error(ErrorCode::kConfiguration,
              "unknown anchor id " + std::to_string(id) + " in '" + name + "'");
}

Constellation parse_constellation(std::istream& in, std::string* warning) {
  Constellation c;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') {
      continue;
    }
    std::istringstream fields(line);
    if (line.compare(first, 5, "name ") == 0) {
      std::string keyword;
      fields >> keyword >> c.name;
      continue;
    }
    Anchor a;
    double x, y, z, yaw, pitch, roll;
    if (!(fields >> a.id >> x >> y >> z >> yaw >> pitch >> roll)) {
      throw Error(ErrorCode::kConfiguration,
                  "constellation line " + std::to_string(line_no) +
                      ": expected 'id x y z yaw pitch roll'");
    }
    a.pose.position = {x, y, z};
    a.pose.orientation =
        rotation_from_ypr(yaw * kDeg, pitch * kDeg, roll * kDeg);
    c.anchors.push_back(a);
  }
  c.validate(0);
  if (c.anchors.size() < 4 && warning != nullptr) {
    *warning = "constellation '" + c.name + "' has fewer than 4 anchors";
  }
  return c;
}

Constellation load_constellation(const std::filesystem::path& path,
                                 std::string* warning) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open " + path.string());
  }
  Constellation c = parse_constellation(in, warning);
  if (c.name.empty()) {
    c.name = path.stem().string();
  }
  return c;
}

void save_constellation(const Constellation& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  }
  out << "name " << c.name << "\n# id x y z yaw_deg pitch_deg roll_deg\n";
  for (const auto& a : c.anchors) {
    const auto& r = a.pose.orientation;
    const double yaw = std::atan2(r(1, 0), r(0, 0));
    const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
    const double roll = std::atan2(r(2, 1), r(2, 2));
    out << a.id << ' ' << format_double(a.pose.position.x()) << ' '
        << format_double(a.pose.position.y()) << ' '
        << format_double(a.pose.position.z()) << ' '
        << format_double(yaw / kDeg) << ' ' << format_double(pitch / kDeg)
        << ' ' << format_double(roll / kDeg) << '\n';
  }
  if (!out) {
    throw Error(ErrorCode::kIo, "failed writing " + path.string());
  }
}

Constellation random_constellation(const std::string& name, const Arena& arena,
                                   std::uint64_t seed, int count) {
  Rng rng(seed);
  std::uniform_real_distribution<double> inset(0.1, 1.2);
  std::uniform_real_distribution<double> z_inset(0.1, 0.6);
  std::uniform_real_distribution<double> yaw(-180.0, 180.0);
  std::uniform_real_distribution<double> pitch(-80.0, 80.0);
  std::uniform_real_distribution<double> roll(-90.0, 90.0);

  Constellation c;
  c.name = name;
  for (int k = 0; k < count; ++k) {
    // Corner k of the box: bit 0 -> x, bit 1 -> y, bit 2 -> z (mod 8).
    const int corner = k % 8;
    const bool high_x = (corner & 1) != 0;
    const bool high_y = (corner & 2) != 0;
    const bool high_z = (corner & 4) != 0;
    Anchor a;
    a.id = k;
    const double ix = inset(rng);
    const double iy = inset(rng);
    const double iz = z_inset(rng);
    a.pose.position = {high_x ? arena.size.x() - ix : ix,
                       high_y ? arena.size.y() - iy : iy,
                       high_z ? arena.size.z() - iz : iz};
    const double y = yaw(rng);
    const double p = pitch(rng);
    const double r = roll(rng);
    a.pose.orientation = rotation_from_ypr(y * kDeg, p * kDeg, r * kDeg);
    c.anchors.push_back(a);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Trajectories

namespace {

struct TermValue {
  double f = 0.0;
  double df = 0.0;
  double ddf = 0.0;
};

TermValue eval_term(const SinusoidTerm& term, double t) {
  const std::size_t n = term.factors.size();
  std::vector<double> s(n), ds(n), dds(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = 2.0 * kPi / term.factors[k].period;
    const double arg = w * t + term.factors[k].phase;
    s[k] = std::sin(arg);
    ds[k] = w * std::cos(arg);
    dds[k] = -w * w * s[k];
  }
  // Product rule, written out over the (few) factors.
  auto product_except = [&](std::size_t skip_a, std::size_t skip_b) {
    double p = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != skip_a && j != skip_b) {
        p *= s[j];
      }
    }
    return p;
  };
  TermValue v;
  v.f = term.amplitude * product_except(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    v.df += ds[k] * product_except(k, n);
    v.ddf += dds[k] * product_except(k, n);
    for (std::size_t m = 0; m < n; ++m) {
      if (m != k) {
        v.ddf += ds[k] * ds[m] * product_except(k, m);
      }
    }
  }
  v.df *= term.amplitude;
  v.ddf *= term.amplitude;
  return v;
}

}  // namespace

double AxisProfile::value(double t) const {
  double v = offset + slope * t;
  for (const auto& term : terms) v += eval_term(term, t).f;
  return v;
}

double AxisProfile::rate(double t) const {
  double v = slope;
  for (const auto& term : terms) v += eval_term(term, t).df;
  return v;
}

double AxisProfile::accel(double t) const {
  double v = 0.0;
  for (const auto& term : terms) v += eval_term(term, t).ddf;
  return v;
}

double AxisProfile::max_excursion() const {
  double sum = 0.0;
  for (const auto& term : terms) sum += std::abs(term.amplitude);
  return sum;
}

void TrajectorySpec::validate() const {
  if (!(duration > 0.0) || !(sample_rate > 0.0)) {
    throw Error(ErrorCode::kConfiguration,
                "trajectory duration and sample rate must be positive");
  }
  for (const AxisProfile* axis :
       {&position[0], &position[1], &position[2], &yaw, &pitch, &roll}) {
    for (const auto& term : axis->terms) {
      for (const auto& f : term.factors) {
        if (!(f.period > 0.0)) {
          throw Error(ErrorCode::kConfiguration,
                      "trajectory periods must be positive");
        }
      }
    }
  }
  for (int i = 0; i < 3; ++i) {
    if (position[i].slope != 0.0) {
      throw Error(ErrorCode::kArenaViolation,
                  "position profiles must not drift linearly");
    }
    const double lo = position[i].offset - position[i].max_excursion();
    const double hi = position[i].offset + position[i].max_excursion();
    if (lo < 0.0 || hi > arena.size(i)) {
      throw Error(ErrorCode::kArenaViolation,
                  "trajectory leaves the arena along axis " + std::to_string(i));
    }
  }
}

TrajectorySample evaluate_trajectory(const TrajectorySpec& spec, double t) {
  TrajectorySample s;
  s.t = t;
  for (int i = 0; i < 3; ++i) {
    s.pose.position(i) = spec.position[i].value(t);
    s.velocity(i) = spec.position[i].rate(t);
    s.acceleration(i) = spec.position[i].accel(t);
  }
  const double psi = spec.yaw.value(t);
  const double theta = spec.pitch.value(t);
  const double phi = spec.roll.value(t);
  const double dpsi = spec.yaw.rate(t);
  const double dtheta = spec.pitch.rate(t);
  const double dphi = spec.roll.rate(t);
  s.pose.orientation = rotation_from_ypr(psi, theta, phi);
  // Body rate of Rz(psi) Ry(theta) Rx(phi).
  s.body_rate = {dphi - dpsi * std::sin(theta),
                 dtheta * std::cos(phi) + dpsi * std::sin(phi) * std::cos(theta),
                 -dtheta * std::sin(phi) + dpsi * std::cos(phi) * std::cos(theta)};
  return s;
}

std::vector<TrajectorySample> gen_trajectory(const TrajectorySpec& spec) {
  spec.validate();
  const auto n = static_cast<std::size_t>(std::floor(spec.duration * spec.sample_rate + 1e-9));
  std::vector<TrajectorySample> out;
  out.reserve(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    out.push_back(evaluate_trajectory(spec, double(k) / spec.sample_rate));
  }
  return out;
}

TrajectorySpec random_trajectory_spec(const Arena& arena, double duration,
                                      double sample_rate, std::uint64_t seed) {
  Rng rng(seed);
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  TrajectorySpec spec;
  spec.arena = arena;
  spec.duration = duration;
  spec.sample_rate = sample_rate;
  for (int i = 0; i < 3; ++i) {
    const double margin = i == 2 ? 0.3 : 0.4;
    const double room = 0.5 * arena.size(i) - margin;
    AxisProfile& axis = spec.position[i];
    axis.offset = 0.5 * arena.size(i);
    const double a1 = uniform(0.35, 0.65) * room;
    const double a2 = uniform(0.3, 1.0) * (room - a1);
    axis.terms.push_back({a1, {{uniform(6.0, 20.0), uniform(0.0, 2.0 * kPi)}}});
    axis.terms.push_back({a2,
                          {{uniform(6.0, 20.0), uniform(0.0, 2.0 * kPi)},
                           {uniform(8.0, 25.0), uniform(0.0, 2.0 * kPi)}}});
  }
  spec.yaw.offset = uniform(-kPi, kPi);
  spec.yaw.slope = uniform(-0.3, 0.3);
  spec.yaw.terms.push_back({uniform(0.5, kPi), {{uniform(8.0, 25.0), uniform(0.0, 2.0 * kPi)}}});
  for (AxisProfile* tilt : {&spec.pitch, &spec.roll}) {
    tilt->terms.push_back({uniform(0.0, 0.25), {{uniform(3.0, 10.0), uniform(0.0, 2.0 * kPi)}}});
  }
  return spec;
}

TrajectorySpec circle_trajectory(const Eigen::Vector3d& center, double radius,
                                 double period, double duration,
                                 double sample_rate, double z_amplitude,
                                 double z_period, const Arena& arena) {
  TrajectorySpec spec;
  spec.arena = arena;
  spec.duration = duration;
  spec.sample_rate = sample_rate;
  // x = cx + r cos(wt), y = cy + r sin(wt).
  spec.position[0] = {center.x(), 0.0, {{radius, {{period, 0.5 * kPi}}}}};
  spec.position[1] = {center.y(), 0.0, {{radius, {{period, 0.0}}}}};
  spec.position[2].offset = center.z();
  if (z_amplitude > 0.0) {
    spec.position[2].terms.push_back({z_amplitude, {{z_period, 0.0}}});
  }
  spec.yaw.offset = 0.5 * kPi;
  spec.yaw.slope = 2.0 * kPi / period;
  return spec;
}

std::vector<ImuSample> synth_imu(const std::vector<TrajectorySample>& trajectory,
                                 const ImuNoise& noise, double sample_rate,
                                 std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double accel_std = noise.accel_density * std::sqrt(sample_rate);
  const double gyro_std = noise.gyro_density * std::sqrt(sample_rate);

  std::vector<ImuSample> out;
  out.reserve(trajectory.size());
  for (const auto& s : trajectory) {
    ImuSample imu;
    imu.timestamp = s.t;
    imu.accel = s.pose.orientation.transpose() * (s.acceleration - kGravity);
    imu.gyro = s.body_rate;
    // Always draw, so the noise stream does not depend on the densities.
    for (int i = 0; i < 3; ++i) imu.accel(i) += accel_std * unit(rng);
    for (int i = 0; i < 3; ++i) imu.gyro(i) += gyro_std * unit(rng);
    out.push_back(imu);
  }
  return out;
}

// ---------------------------------------------------------------------------
// TDOA synthesis

double synth_bias(const Features& chi, const BiasParams& params) {
  const double ri = chi.dp_i.norm();
  const double rj = chi.dp_j.norm();
  return params.k1 * (std::sin(chi.beta(0)) * std::cos(chi.alpha(0)) -
                      std::sin(chi.beta(1)) * std::cos(chi.alpha(1))) +
         params.k2 * (std::sin(2.0 * chi.beta(2)) - std::sin(2.0 * chi.beta(3))) +
         params.k3 * (ri - rj) / (1.0 + ri + rj);
}

void OutlierConfig::validate() const {
  if (probability < 0.0 || probability > 1.0) {
    throw Error(ErrorCode::kConfiguration, "outlier probability must be in [0, 1]");
  }
  if (probability > 0.0 && !(min_shift < max_shift)) {
    throw Error(ErrorCode::kConfiguration, "outlier min_shift must be < max_shift");
  }
  if (negative_fraction < 0.0 || negative_fraction > 1.0) {
    throw Error(ErrorCode::kConfiguration, "negative_fraction must be in [0, 1]");
  }
}

namespace {

std::vector<std::pair<AnchorId, AnchorId>> schedule_for(
    const Constellation& c, const TdoaSynthConfig& config) {
  if (!config.pairs.empty()) {
    for (const auto& [i, j] : config.pairs) {
      c.find(i);
      c.find(j);
      if (i == j) {
        throw Error(ErrorCode::kConfiguration, "anchor pair repeats an id");
      }
    }
    return config.pairs;
  }
  std::vector<std::pair<AnchorId, AnchorId>> pairs;
  const std::size_t m = c.anchors.size();
  for (std::size_t k = 0; k < m; ++k) {
    pairs.emplace_back(c.anchors[k].id, c.anchors[(k + 1) % m].id);
  }
  return pairs;
}

}  // namespace

std::vector<DatasetRecord> synth_tdoa(const TrajectorySpec& trajectory,
                                      const Constellation& constellation,
                                      const TdoaSynthConfig& config,
                                      std::uint64_t seed, SynthStats* stats) {
  constellation.validate(2);
  trajectory.validate();
  config.outliers.validate();
  if (config.sigma < 0.0 || !(config.rate > 0.0)) {
    throw Error(ErrorCode::kConfiguration, "sigma must be >= 0 and rate > 0");
  }
  const auto pairs = schedule_for(constellation, config);

  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  const auto n = static_cast<std::size_t>(
      std::floor(trajectory.duration * config.rate + 1e-9));
  std::vector<DatasetRecord> out;
  out.reserve(n + 1);
  std::size_t skipped = 0;
  for (std::size_t k = 0; k <= n; ++k) {
    const double t = double(k) / config.rate;
    const auto [id_i, id_j] = pairs[k % pairs.size()];
    const Posed& a_i = constellation.find(id_i).pose;
    const Posed& a_j = constellation.find(id_j).pose;
    const Posed tag = evaluate_trajectory(trajectory, t).pose;

    // Fixed draw pattern per slot keeps streams aligned across configs.
    const double noise = unit(rng);
    const double u_outlier = u01(rng);
    const double u_shift = u01(rng);
    const double u_sign = u01(rng);

    double ideal = 0.0;
    Features chi;
    try {
      ideal = tdoa_ideal<double>(tag.position, a_i.position, a_j.position);
      chi = extract_features(tag, a_i, a_j);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSingularGeometry &&
          e.code() != ErrorCode::kDegenerateDirection) {
        throw;
      }
      ++skipped;
      continue;
    }

    DatasetRecord r;
    r.t = t;
    r.anchor_i = id_i;
    r.anchor_j = id_j;
    r.tag = tag;
    r.bias_true = synth_bias(chi, config.bias);
    r.d_raw = ideal + r.bias_true + config.sigma * noise;
    if (u_outlier < config.outliers.probability) {
      r.is_outlier = true;
      const double shift = config.outliers.min_shift +
                           u_shift * (config.outliers.max_shift - config.outliers.min_shift);
      r.d_raw += u_sign < config.outliers.negative_fraction ? -shift : shift;
    }
    out.push_back(r);
  }
  if (stats != nullptr) {
    stats->skipped_singular = skipped;
  }
  return out;
}

double record_ideal(const DatasetRecord& r, const Constellation& c) {
  return tdoa_ideal<double>(r.tag.position, c.find(r.anchor_i).pose.position,
                            c.find(r.anchor_j).pose.position);
}

Features record_features(const DatasetRecord& r, const Constellation& c) {
  return extract_features(r.tag, c.find(r.anchor_i).pose, c.find(r.anchor_j).pose);
}

// ---------------------------------------------------------------------------
// Datasets

DatasetSplit build_dataset(const std::vector<RecordGroup>& groups,
                           FeatureMode mode, std::uint64_t seed,
                           double max_error) {
  const int width = feature_width(mode);
  std::vector<Eigen::VectorXd> features;
  std::vector<double> labels;
  DatasetSplit split;
  for (const auto& g : groups) {
    for (const auto& r : *g.records) {
      const double label = r.d_raw - record_ideal(r, *g.constellation);
      if (!(std::abs(label) <= max_error)) {
        ++split.dropped;
        continue;
      }
      features.push_back(select_features(record_features(r, *g.constellation), mode));
      labels.push_back(label);
    }
  }
  if (labels.empty()) {
    throw Error(ErrorCode::kEmptyDataset, "no records left after filtering");
  }

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5917));
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t n = labels.size();
  const auto n_train = static_cast<std::size_t>(std::llround(0.70 * double(n)));
  const auto n_val = std::min(
      n - n_train, static_cast<std::size_t>(std::llround(0.15 * double(n))));

  auto fill = [&](LabeledSet& set, std::size_t begin, std::size_t end) {
    set.feature_mode = mode;
    set.inputs.resize(width, Eigen::Index(end - begin));
    set.labels.resize(Eigen::Index(end - begin));
    for (std::size_t k = begin; k < end; ++k) {
      set.inputs.col(Eigen::Index(k - begin)) = features[order[k]];
      set.labels(Eigen::Index(k - begin)) = labels[order[k]];
    }
  };
  fill(split.train, 0, n_train);
  fill(split.val, n_train, n_train + n_val);
  fill(split.test, n_train + n_val, n);
  return split;
}

DatasetSplit build_dataset(const std::vector<DatasetRecord>& records,
                           const Constellation& constellation, FeatureMode mode,
                           std::uint64_t seed, double max_error) {
  return build_dataset({RecordGroup{&records, &constellation}}, mode, seed, max_error);
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

constexpr const char* kCsvHeader =
    "t,anchor_i,anchor_j,d_raw,tag_px,tag_py,tag_pz,tag_qw,tag_qx,tag_qy,"
    "tag_qz,bias_true,is_outlier";

}  // namespace

void write_records_csv(const std::vector<DatasetRecord>& records, std::ostream& out) {
  out << kCsvHeader << '\n';
  for (const auto& r : records) {
    Eigen::Quaterniond q(r.tag.orientation);
    q.normalize();
    if (q.w() < 0.0) {
      q.coeffs() *= -1.0;
    }
    out << format_double(r.t) << ',' << r.anchor_i << ',' << r.anchor_j << ','
        << format_double(r.d_raw) << ',' << format_double(r.tag.position.x())
        << ',' << format_double(r.tag.position.y()) << ','
        << format_double(r.tag.position.z()) << ',' << format_double(q.w())
        << ',' << format_double(q.x()) << ',' << format_double(q.y()) << ','
        << format_double(q.z()) << ',' << format_double(r.bias_true) << ','
        << (r.is_outlier ? 1 : 0) << '\n';
  }
}

void write_records_csv(const std::vector<DatasetRecord>& records,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  }
  write_records_csv(records, out);
  if (!out) {
    throw Error(ErrorCode::kIo, "failed writing " + path.string());
  }
}

std::vector<DatasetRecord> read_records_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,anchor_i,anchor_j", 0) != 0) {
    throw Error(ErrorCode::kInvalidInput, "dataset CSV header missing");
  }
  std::vector<DatasetRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") {
      continue;
    }
    std::vector<double> v;
    std::size_t start = 0;
    while (start <= line.size()) {
      const auto end = std::min(line.find(',', start), line.size());
      const std::string cell = line.substr(start, end - start);
      char* tail = nullptr;
      const double x = std::strtod(cell.c_str(), &tail);
      if (cell.empty() || tail == cell.c_str()) {
        throw Error(ErrorCode::kInvalidInput,
                    "dataset CSV line " + std::to_string(line_no) + ": bad number");
      }
      v.push_back(x);
      start = end + 1;
    }
    if (v.size() != 13) {
      throw Error(ErrorCode::kInvalidInput,
                  "dataset CSV line " + std::to_string(line_no) + ": expected 13 columns");
    }
    DatasetRecord r;
    r.t = v[0];
    r.anchor_i = AnchorId(v[1]);
    r.anchor_j = AnchorId(v[2]);
    r.d_raw = v[3];
    r.tag.position = {v[4], v[5], v[6]};
    r.tag.orientation =
        Eigen::Quaterniond(v[7], v[8], v[9], v[10]).normalized().toRotationMatrix();
    r.bias_true = v[11];
    r.is_outlier = v[12] != 0.0;
    out.push_back(r);
  }
  return out;
}

std::vector<DatasetRecord> read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open " + path.string());
  }
  return read_records_csv(in);
}

}  // namespace uwbtdoa
