#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "uwbtdoa/biasnet.hpp"
#include "uwbtdoa/error.hpp"

namespace uwbtdoa {
namespace {

constexpr char kMagic[7] = {'T', 'D', 'O', 'A', 'N', 'N', '1'};
constexpr std::uint32_t kFormatVersion = 1;

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      out_.push_back(std::uint8_t(v >> (8 * i)));
    }
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      out_.push_back(std::uint8_t(bits >> (8 * i)));
    }
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  const std::uint8_t* take(std::size_t n) {
    if (in_.size() - pos_ < n) {
      throw Error(ErrorCode::kTruncatedFile, "truncated model file");
    }
    const auto* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint32_t u32() {
    const auto* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= std::uint32_t(p[i]) << (8 * i);
    }
    return v;
  }
  double f64() {
    const auto* p = take(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= std::uint64_t(p[i]) << (8 * i);
    }
    return std::bit_cast<double>(bits);
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_model(const MlpModel& model) {
  model.validate();
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kFormatVersion);
  w.u8(std::uint8_t(model.activation));
  w.u8(std::uint8_t(model.feature_mode));
  w.u32(std::uint32_t(model.layers.size()));
  for (const auto& layer : model.layers) {
    w.u32(std::uint32_t(layer.weights.rows()));
    w.u32(std::uint32_t(layer.weights.cols()));
  }
  for (const auto& layer : model.layers) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
        w.f64(layer.weights(r, c));
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      w.f64(layer.bias(r));
    }
  }
  for (Eigen::Index i = 0; i < model.input_mean.size(); ++i) {
    w.f64(model.input_mean(i));
  }
  for (Eigen::Index i = 0; i < model.input_std.size(); ++i) {
    w.f64(model.input_std(i));
  }
  w.f64(model.output_scale);
  return w.take();
}

MlpModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kUnrecognizedModelFile, "unrecognized model file");
  }
  Reader r(bytes);
  r.take(sizeof(kMagic));
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                "model file version " + std::to_string(version) +
                    ", expected " + std::to_string(kFormatVersion));
  }

  MlpModel model;
  const std::uint8_t activation = r.u8();
  const std::uint8_t mode = r.u8();
  if (activation > 1 || mode > 1) {
    throw Error(ErrorCode::kUnrecognizedModelFile,
                "unknown activation or feature mode tag");
  }
  model.activation = Activation(activation);
  model.feature_mode = FeatureMode(mode);

  const std::uint32_t layer_count = r.u32();
  // Every layer needs at least its 8-byte shape header, which bounds a sane
  // count before allocating anything.
  if (std::size_t(layer_count) * 8 > bytes.size()) {
    throw Error(ErrorCode::kTruncatedFile, "truncated model file");
  }
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
  for (std::uint32_t k = 0; k < layer_count; ++k) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    shapes.emplace_back(rows, cols);
  }
  std::uint64_t expected = 0;
  for (const auto& [rows, cols] : shapes) {
    expected += (std::uint64_t(rows) * cols + rows) * 8;
  }
  if (expected > bytes.size()) {
    throw Error(ErrorCode::kTruncatedFile, "truncated model file");
  }

  for (const auto& [rows, cols] : shapes) {
    DenseLayer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (std::uint32_t i = 0; i < rows; ++i) {
      for (std::uint32_t j = 0; j < cols; ++j) {
        layer.weights(i, j) = r.f64();
      }
    }
    for (std::uint32_t i = 0; i < rows; ++i) {
      layer.bias(i) = r.f64();
    }
    model.layers.push_back(std::move(layer));
  }
  if (model.layers.empty() ||
      model.layers.front().weights.cols() != model.input_width()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "first layer width does not match the feature mode");
  }
  const int width = model.input_width();
  model.input_mean.resize(width);
  model.input_std.resize(width);
  for (int i = 0; i < width; ++i) model.input_mean(i) = r.f64();
  for (int i = 0; i < width; ++i) model.input_std(i) = r.f64();
  model.output_scale = r.f64();
  if (!r.at_end()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "trailing bytes after model payload");
  }
  model.validate();
  return model;
}

void save_model(const MlpModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  if (!out) {
    throw Error(ErrorCode::kIo, "failed writing " + path.string());
  }
}

MlpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace uwbtdoa
