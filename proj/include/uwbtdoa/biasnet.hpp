#pragma once

// Small fully connected regressor that predicts the TDOA bias of a
// measurement from its relative-pose features, plus its training loop and
// on-disk format.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "uwbtdoa/geometry.hpp"

namespace uwbtdoa {

enum class Activation : std::uint8_t { kRelu = 0, kTanh = 1 };

/// Which slice of the 14 relative-pose features the network consumes.
/// kPositionOnly keeps the two position differences (6 inputs) and drops
/// all angles.
enum class FeatureMode : std::uint8_t { kFull = 0, kPositionOnly = 1 };

int feature_width(FeatureMode mode);
Eigen::VectorXd select_features(const Features& chi, FeatureMode mode);

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
};

struct MlpModel {
  std::vector<DenseLayer> layers;
  Activation activation = Activation::kRelu;
  FeatureMode feature_mode = FeatureMode::kFull;
  // Standardization applied to raw features before the first layer.
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_std;
  // The last layer's output is multiplied by this to get meters.
  double output_scale = 1.0;

  int input_width() const { return feature_width(feature_mode); }

  /// Throws kDimensionMismatch when layer shapes do not chain from
  /// input_width() to a single output, kConfiguration on non-positive std.
  void validate() const;

  /// Zero weights, unit standardization. Predicts 0 everywhere.
  static MlpModel zeros(const std::vector<int>& hidden, FeatureMode mode,
                        Activation activation = Activation::kRelu);

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static MlpModel xavier(const std::vector<int>& hidden, FeatureMode mode,
                         Activation activation, std::uint64_t seed);

  std::size_t parameter_count() const;
};

inline const std::vector<int> kDefaultHidden = {30, 30, 30};

/// Bias prediction in meters for raw (unstandardized) features whose width
/// matches the model.
double forward(const MlpModel& model,
               const Eigen::Ref<const Eigen::VectorXd>& input);
double forward(const MlpModel& model, const Features& chi);

/// Column-wise batch inference; inputs is width x n.
Eigen::RowVectorXd forward_batch(const MlpModel& model,
                                 const Eigen::Ref<const Eigen::MatrixXd>& inputs);

/// Same layout as the model's layers.
struct Gradients {
  std::vector<DenseLayer> layers;
};

/// Gradient of 0.5 * (forward(input) - target)^2 with respect to every
/// weight and bias.
Gradients backward(const MlpModel& model,
                   const Eigen::Ref<const Eigen::VectorXd>& input,
                   double target);
Gradients backward(const MlpModel& model, const Features& chi, double target);

/// Gradient of the batch mean of 0.5 * residual^2; inputs is width x n.
Gradients backward_batch(const MlpModel& model,
                         const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                         const Eigen::Ref<const Eigen::RowVectorXd>& targets);

/// Features stored column-wise with their regression labels (meters).
struct LabeledSet {
  FeatureMode feature_mode = FeatureMode::kFull;
  Eigen::MatrixXd inputs;  // width x n
  Eigen::VectorXd labels;  // n

  Eigen::Index size() const { return labels.size(); }
};

double mean_squared_error(const MlpModel& model, const LabeledSet& set);

struct TrainConfig {
  std::vector<int> hidden = kDefaultHidden;
  Activation activation = Activation::kRelu;
  int batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  int max_epochs = 200;
  // Consecutive epochs with rising validation error before stopping.
  int patience = 5;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  MlpModel model;  // snapshot with the lowest validation error
  std::vector<EpochStats> history;
  int best_epoch = 0;
  bool early_stopped = false;
};

/// Mini-batch gradient descent with momentum and early stopping. Fully
/// determined by the data and config.rng_seed.
TrainResult train(const LabeledSet& train_set, const LabeledSet& val_set,
                  const TrainConfig& config);

/// Like train() but starting from the given weights; the initial model's
/// standardization is kept.
TrainResult train_from(MlpModel initial, const LabeledSet& train_set,
                       const LabeledSet& val_set, const TrainConfig& config);

/// Per-feature mean and standard deviation of a set (std floored so it is
/// always positive).
void fit_standardization(const LabeledSet& set, Eigen::VectorXd& mean,
                         Eigen::VectorXd& std);

// Model file format, little-endian throughout:
//   char[7]  magic "TDOANN1"
//   u32      format version (1)
//   u8       activation, u8 feature mode
//   u32      layer count L
//   L x (u32 rows, u32 cols)
//   per layer: rows*cols f64 weights (row-major), rows f64 biases
//   width f64 input means, width f64 input stds
//   f64      output scale
std::vector<std::uint8_t> serialize_model(const MlpModel& model);
MlpModel deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

}  // namespace uwbtdoa
