#include "uwbtdoa/biasnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "uwbtdoa/error.hpp"
#include "uwbtdoa/random.hpp"

namespace uwbtdoa {

int feature_width(FeatureMode mode) {
  return mode == FeatureMode::kFull ? kFeatureDim : 6;
}

Eigen::VectorXd select_features(const Features& chi, FeatureMode mode) {
  if (mode == FeatureMode::kFull) {
    return chi.to_array();
  }
  Eigen::VectorXd out(6);
  out << chi.dp_i, chi.dp_j;
  return out;
}

void MlpModel::validate() const {
  if (layers.empty()) {
    throw Error(ErrorCode::kDimensionMismatch, "model has no layers");
  }
  Eigen::Index width = input_width();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& layer = layers[k];
    if (layer.weights.cols() != width ||
        layer.bias.size() != layer.weights.rows()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "layer " + std::to_string(k) + " shape does not chain");
    }
    width = layer.weights.rows();
  }
  if (width != 1) {
    throw Error(ErrorCode::kDimensionMismatch, "model output width must be 1");
  }
  if (input_mean.size() != input_width() || input_std.size() != input_width()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "normalization width does not match input width");
  }
  if (!(input_std.array() > 0.0).all()) {
    throw Error(ErrorCode::kConfiguration, "input std must be positive");
  }
}

namespace {

std::vector<int> layer_widths(const std::vector<int>& hidden, FeatureMode mode) {
  std::vector<int> widths;
  widths.push_back(feature_width(mode));
  for (int h : hidden) {
    if (h < 1) {
      throw Error(ErrorCode::kConfiguration, "hidden width must be positive");
    }
    widths.push_back(h);
  }
  widths.push_back(1);
  return widths;
}

}  // namespace

MlpModel MlpModel::zeros(const std::vector<int>& hidden, FeatureMode mode,
                         Activation activation) {
  MlpModel model;
  model.activation = activation;
  model.feature_mode = mode;
  const auto widths = layer_widths(hidden, mode);
  for (std::size_t k = 1; k < widths.size(); ++k) {
    model.layers.push_back({Eigen::MatrixXd::Zero(widths[k], widths[k - 1]),
                            Eigen::VectorXd::Zero(widths[k])});
  }
  model.input_mean = Eigen::VectorXd::Zero(widths.front());
  model.input_std = Eigen::VectorXd::Ones(widths.front());
  return model;
}

MlpModel MlpModel::xavier(const std::vector<int>& hidden, FeatureMode mode,
                          Activation activation, std::uint64_t seed) {
  MlpModel model = zeros(hidden, mode, activation);
  Rng rng(seed);
  for (auto& layer : model.layers) {
    const double limit =
        std::sqrt(6.0 / double(layer.weights.rows() + layer.weights.cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    // Row-major fill order keeps the draw sequence independent of Eigen's
    // storage order.
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
        layer.weights(r, c) = dist(rng);
      }
    }
  }
  return model;
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    n += std::size_t(layer.weights.size() + layer.bias.size());
  }
  return n;
}

namespace {

void apply_activation(Activation act, Eigen::MatrixXd& z) {
  if (act == Activation::kRelu) {
    z = z.cwiseMax(0.0);
  } else {
    z = z.array().tanh().matrix();
  }
}

// d act / d z, expressed through the activation output a = act(z).
Eigen::ArrayXXd activation_slope(Activation act, const Eigen::MatrixXd& a) {
  if (act == Activation::kRelu) {
    return (a.array() > 0.0).cast<double>();
  }
  return 1.0 - a.array().square();
}

void require_width(const MlpModel& model, Eigen::Index rows) {
  if (rows != model.input_width()) {
    throw Error(ErrorCode::kConfiguration,
                "input width " + std::to_string(rows) +
                    " does not match model width " +
                    std::to_string(model.input_width()));
  }
}

Eigen::MatrixXd standardize(const MlpModel& model,
                            const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
  return ((inputs.colwise() - model.input_mean).array().colwise() /
          model.input_std.array())
      .matrix();
}

// Forward pass that keeps every layer's activation; activations[0] is the
// standardized input, activations.back() the unscaled output row.
std::vector<Eigen::MatrixXd> forward_trace(
    const MlpModel& model, const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(model.layers.size() + 1);
  acts.push_back(standardize(model, inputs));
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& layer = model.layers[k];
    Eigen::MatrixXd z = layer.weights * acts.back();
    z.colwise() += layer.bias;
    if (k + 1 < model.layers.size()) {
      apply_activation(model.activation, z);
    }
    acts.push_back(std::move(z));
  }
  return acts;
}

// Backpropagates per-sample output sensitivities d loss / d prediction.
Gradients backprop(const MlpModel& model,
                   const std::vector<Eigen::MatrixXd>& acts,
                   Eigen::MatrixXd delta) {
  Gradients grads;
  grads.layers.resize(model.layers.size());
  delta *= model.output_scale;
  for (std::size_t k = model.layers.size(); k-- > 0;) {
    auto& g = grads.layers[k];
    g.weights.noalias() = delta * acts[k].transpose();
    g.bias = delta.rowwise().sum();
    if (k > 0) {
      Eigen::MatrixXd upstream = model.layers[k].weights.transpose() * delta;
      delta = (upstream.array() * activation_slope(model.activation, acts[k]))
                  .matrix();
    }
  }
  return grads;
}

}  // namespace

Eigen::RowVectorXd forward_batch(const MlpModel& model,
                                 const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
  require_width(model, inputs.rows());
  Eigen::MatrixXd a = standardize(model, inputs);
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& layer = model.layers[k];
    Eigen::MatrixXd z = layer.weights * a;
    z.colwise() += layer.bias;
    if (k + 1 < model.layers.size()) {
      apply_activation(model.activation, z);
    }
    a = std::move(z);
  }
  return model.output_scale * a.row(0);
}

double forward(const MlpModel& model,
               const Eigen::Ref<const Eigen::VectorXd>& input) {
  return forward_batch(model, input)(0);
}

double forward(const MlpModel& model, const Features& chi) {
  return forward(model, select_features(chi, model.feature_mode));
}

Gradients backward_batch(const MlpModel& model,
                         const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                         const Eigen::Ref<const Eigen::RowVectorXd>& targets) {
  require_width(model, inputs.rows());
  const auto acts = forward_trace(model, inputs);
  const Eigen::RowVectorXd prediction = model.output_scale * acts.back().row(0);
  Eigen::MatrixXd delta = (prediction - targets) / double(targets.size());
  return backprop(model, acts, std::move(delta));
}

Gradients backward(const MlpModel& model,
                   const Eigen::Ref<const Eigen::VectorXd>& input,
                   double target) {
  Eigen::RowVectorXd t(1);
  t(0) = target;
  return backward_batch(model, input, t);
}

Gradients backward(const MlpModel& model, const Features& chi, double target) {
  return backward(model, select_features(chi, model.feature_mode), target);
}

double mean_squared_error(const MlpModel& model, const LabeledSet& set) {
  if (set.size() == 0) {
    return 0.0;
  }
  // Chunked so large sets do not allocate width x n activations per layer.
  constexpr Eigen::Index kChunk = 4096;
  double sum = 0.0;
  for (Eigen::Index start = 0; start < set.size(); start += kChunk) {
    const Eigen::Index n = std::min(kChunk, set.size() - start);
    const Eigen::RowVectorXd pred =
        forward_batch(model, set.inputs.middleCols(start, n));
    sum += (pred.transpose() - set.labels.segment(start, n)).squaredNorm();
  }
  return sum / double(set.size());
}

void TrainConfig::validate() const {
  if (batch_size < 1) {
    throw Error(ErrorCode::kConfiguration, "batch_size must be >= 1");
  }
  if (patience < 1) {
    throw Error(ErrorCode::kConfiguration, "patience must be >= 1");
  }
  if (!(learning_rate > 0.0)) {
    throw Error(ErrorCode::kConfiguration, "learning_rate must be > 0");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw Error(ErrorCode::kConfiguration, "momentum must be in [0, 1)");
  }
  if (max_epochs < 1) {
    throw Error(ErrorCode::kConfiguration, "max_epochs must be >= 1");
  }
}

void fit_standardization(const LabeledSet& set, Eigen::VectorXd& mean,
                         Eigen::VectorXd& std) {
  const double n = double(set.size());
  mean = set.inputs.rowwise().mean();
  std = ((set.inputs.colwise() - mean).array().square().rowwise().sum() / n)
            .sqrt()
            .matrix();
  for (Eigen::Index i = 0; i < std.size(); ++i) {
    if (!(std(i) > 1e-12)) {
      std(i) = 1.0;
    }
  }
}

namespace {

void check_sets(const LabeledSet& train_set, const LabeledSet& val_set) {
  if (train_set.size() == 0 || val_set.size() == 0) {
    throw Error(ErrorCode::kConfiguration,
                "training and validation sets must be non-empty");
  }
  if (train_set.feature_mode != val_set.feature_mode) {
    throw Error(ErrorCode::kConfiguration,
                "training and validation feature modes differ");
  }
  for (const LabeledSet* s : {&train_set, &val_set}) {
    if (s->inputs.cols() != s->size() ||
        s->inputs.rows() != feature_width(s->feature_mode)) {
      throw Error(ErrorCode::kDimensionMismatch, "labeled set shape mismatch");
    }
    if (!s->inputs.allFinite() || !s->labels.allFinite()) {
      throw Error(ErrorCode::kInvalidInput, "non-finite training data");
    }
  }
}

}  // namespace

TrainResult train(const LabeledSet& train_set, const LabeledSet& val_set,
                  const TrainConfig& config) {
  config.validate();
  check_sets(train_set, val_set);
  MlpModel model = MlpModel::xavier(config.hidden, train_set.feature_mode,
                                    config.activation,
                                    derive_seed(config.rng_seed, 0));
  fit_standardization(train_set, model.input_mean, model.input_std);
  const double mean = train_set.labels.mean();
  const double spread = std::sqrt(
      (train_set.labels.array() - mean).square().mean());
  // Without spread the labels are constant; scale by their magnitude.
  model.output_scale = spread > 1e-9 ? spread : std::abs(mean);
  return train_from(std::move(model), train_set, val_set, config);
}

TrainResult train_from(MlpModel model, const LabeledSet& train_set,
                       const LabeledSet& val_set, const TrainConfig& config) {
  config.validate();
  check_sets(train_set, val_set);
  if (model.feature_mode != train_set.feature_mode) {
    throw Error(ErrorCode::kConfiguration,
                "model feature mode differs from the training set");
  }
  model.validate();

  Rng shuffle_rng(derive_seed(config.rng_seed, 1));
  std::vector<Eigen::Index> order(std::size_t(train_set.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  std::vector<DenseLayer> velocity;
  for (const auto& layer : model.layers) {
    velocity.push_back({Eigen::MatrixXd::Zero(layer.weights.rows(),
                                              layer.weights.cols()),
                        Eigen::VectorXd::Zero(layer.bias.size())});
  }

  TrainResult result;
  result.model = model;
  double best_val = mean_squared_error(model, val_set);
  double previous_val = best_val;
  int rising = 0;

  const Eigen::Index width = train_set.inputs.rows();
  Eigen::MatrixXd batch_in(width, config.batch_size);
  Eigen::RowVectorXd batch_target(config.batch_size);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size();
         start += std::size_t(config.batch_size)) {
      const auto n = Eigen::Index(
          std::min(order.size() - start, std::size_t(config.batch_size)));
      batch_in.resize(width, n);
      batch_target.resize(n);
      for (Eigen::Index c = 0; c < n; ++c) {
        const Eigen::Index idx = order[start + std::size_t(c)];
        batch_in.col(c) = train_set.inputs.col(idx);
        batch_target(c) = train_set.labels(idx);
      }
      const Gradients g = backward_batch(model, batch_in, batch_target);
      for (std::size_t k = 0; k < model.layers.size(); ++k) {
        velocity[k].weights =
            config.momentum * velocity[k].weights -
            config.learning_rate * g.layers[k].weights;
        velocity[k].bias = config.momentum * velocity[k].bias -
                           config.learning_rate * g.layers[k].bias;
        model.layers[k].weights += velocity[k].weights;
        model.layers[k].bias += velocity[k].bias;
      }
    }

    EpochStats stats{epoch, mean_squared_error(model, train_set),
                     mean_squared_error(model, val_set)};
    if (!std::isfinite(stats.train_mse) || !std::isfinite(stats.val_mse)) {
      throw Error(ErrorCode::kTrainingDiverged,
                  "training diverged at epoch " + std::to_string(epoch));
    }
    result.history.push_back(stats);

    if (stats.val_mse < best_val) {
      best_val = stats.val_mse;
      result.model = model;
      result.best_epoch = epoch;
    }
    rising = stats.val_mse > previous_val ? rising + 1 : 0;
    previous_val = stats.val_mse;
    if (rising >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace uwbtdoa
