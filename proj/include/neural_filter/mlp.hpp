#pragma once

// Feedforward ReLU network used as the one-step flow surrogate: forward
// evaluation, the analytic input-Jacobian, and a binary model file.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "neural_filter/dynamics.hpp"
#include "neural_filter/error.hpp"

namespace nf {

enum class Activation : std::uint8_t { relu = 0, linear = 1 };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "linear"; }

struct LayerSpec {
  int width = 0;
  Activation activation = Activation::relu;
};

struct DenseLayer {
  Matrix weights;  // width x fan_in
  Vector bias;     // width
  Activation activation = Activation::linear;

  Eigen::Index width() const noexcept { return weights.rows(); }
  Eigen::Index fan_in() const noexcept { return weights.cols(); }
};

class MlpModel {
 public:
  MlpModel() = default;

  MlpModel(int input_dim, std::vector<DenseLayer> layers, bool use_bias = true)
      : input_dim_(input_dim), layers_(std::move(layers)), use_bias_(use_bias) {
    if (input_dim_ < 1) fail(ErrorKind::invalid_architecture, "input_dim must be >= 1");
    if (layers_.empty()) fail(ErrorKind::invalid_architecture, "a model needs at least one layer");
    Eigen::Index fan_in = input_dim_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const DenseLayer& layer = layers_[i];
      if (layer.width() < 1) fail(ErrorKind::invalid_architecture, "layer " + std::to_string(i) + " has zero width");
      if (layer.fan_in() != fan_in || layer.bias.size() != layer.width()) {
        fail(ErrorKind::shape_mismatch, "layer " + std::to_string(i) + " does not chain with its predecessor");
      }
      if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
        fail(ErrorKind::invalid_argument, "layer " + std::to_string(i) + " has non-finite parameters");
      }
      if (!use_bias_ && !layer.bias.isZero(0.0)) {
        fail(ErrorKind::invalid_argument, "bias-free model carries non-zero biases");
      }
      fan_in = layer.width();
    }
    if (layers_.back().activation != Activation::linear) {
      fail(ErrorKind::invalid_architecture, "output layer must be linear");
    }
  }

  int input_dim() const noexcept { return input_dim_; }
  int output_dim() const noexcept { return layers_.empty() ? 0 : static_cast<int>(layers_.back().width()); }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  bool use_bias() const noexcept { return use_bias_; }

  std::vector<LayerSpec> architecture() const {
    std::vector<LayerSpec> specs;
    for (const auto& layer : layers_) specs.push_back({static_cast<int>(layer.width()), layer.activation});
    return specs;
  }

  /// Number of trainable scalars. Biases count only when enabled.
  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& layer : layers_) n += layer.weights.size() + (use_bias_ ? layer.bias.size() : 0);
    return n;
  }

  /// Parameters packed layer by layer: weights column-major, then bias.
  Vector flatten() const {
    Vector out(parameter_count());
    Eigen::Index pos = 0;
    for (const auto& layer : layers_) {
      out.segment(pos, layer.weights.size()) = Eigen::Map<const Vector>(layer.weights.data(), layer.weights.size());
      pos += layer.weights.size();
      if (use_bias_) {
        out.segment(pos, layer.bias.size()) = layer.bias;
        pos += layer.bias.size();
      }
    }
    return out;
  }

  /// Inverse of flatten(). Only the training loop mutates a model.
  void set_parameters(const Vector& packed) {
    if (packed.size() != parameter_count()) fail(ErrorKind::shape_mismatch, "parameter vector has wrong length");
    Eigen::Index pos = 0;
    for (auto& layer : layers_) {
      Eigen::Map<Vector>(layer.weights.data(), layer.weights.size()) = packed.segment(pos, layer.weights.size());
      pos += layer.weights.size();
      if (use_bias_) {
        layer.bias = packed.segment(pos, layer.bias.size());
        pos += layer.bias.size();
      }
    }
  }

  friend bool operator==(const MlpModel& a, const MlpModel& b) {
    if (a.input_dim_ != b.input_dim_ || a.use_bias_ != b.use_bias_ || a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto& la = a.layers_[i];
      const auto& lb = b.layers_[i];
      if (la.activation != lb.activation || la.weights.rows() != lb.weights.rows() ||
          la.weights.cols() != lb.weights.cols() || la.weights != lb.weights || la.bias != lb.bias) {
        return false;
      }
    }
    return true;
  }

 private:
  int input_dim_ = 0;
  std::vector<DenseLayer> layers_;
  bool use_bias_ = true;
};

/// Random initial model. ReLU layers use He-uniform scaling, the linear
/// output layer LeCun-uniform; biases start at zero.
inline MlpModel init_model(int input_dim, const std::vector<LayerSpec>& layers, std::uint64_t seed,
                           bool use_bias = true) {
  if (input_dim < 1) fail(ErrorKind::invalid_architecture, "input_dim must be >= 1");
  if (layers.empty()) fail(ErrorKind::invalid_architecture, "layer list is empty");
  std::mt19937_64 rng(seed);
  std::vector<DenseLayer> built;
  int fan_in = input_dim;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& spec = layers[i];
    if (spec.width < 1) fail(ErrorKind::invalid_architecture, "layer " + std::to_string(i) + " has zero width");
    const double gain = spec.activation == Activation::relu ? 6.0 : 3.0;
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const double limit = std::sqrt(gain / fan_in);
    DenseLayer layer;
    layer.activation = spec.activation;
    layer.weights.resize(spec.width, fan_in);
    for (int r = 0; r < spec.width; ++r) {
      for (int c = 0; c < fan_in; ++c) layer.weights(r, c) = limit * dist(rng);
    }
    layer.bias = Vector::Zero(spec.width);
    built.push_back(std::move(layer));
    fan_in = spec.width;
  }
  return MlpModel(input_dim, std::move(built), use_bias);
}

inline void check_input(const MlpModel& model, const Vector& x) {
  if (x.size() != model.input_dim()) {
    fail(ErrorKind::invalid_argument, "input has length " + std::to_string(x.size()) + ", model expects " +
                                          std::to_string(model.input_dim()));
  }
}

inline Vector forward(const MlpModel& model, const Vector& x) {
  check_input(model, x);
  Vector a = x;
  for (const auto& layer : model.layers()) {
    Vector z = layer.weights * a + layer.bias;
    if (layer.activation == Activation::relu) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

/// d forward / d x at x, as the product of per-layer Jacobians. A ReLU unit
/// contributes its weight row only when its preactivation is strictly
/// positive.
inline Matrix jacobian_input(const MlpModel& model, const Vector& x) {
  check_input(model, x);
  Vector a = x;
  Matrix jac = Matrix::Identity(model.input_dim(), model.input_dim());
  for (const auto& layer : model.layers()) {
    Vector z = layer.weights * a + layer.bias;
    Matrix step = layer.weights;
    if (layer.activation == Activation::relu) {
      for (Eigen::Index r = 0; r < z.size(); ++r) {
        if (!(z[r] > 0.0)) {
          step.row(r).setZero();
          z[r] = 0.0;
        }
      }
    }
    jac = step * jac;
    a = std::move(z);
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Model file
//
//   magic "NFMLP"            5 bytes
//   version                  u8   (kModelFormatVersion)
//   flags                    u8   bit 0: biases enabled
//   input_dim                u64
//   layer_count              u64
//   per layer: width u64, activation u8 (0 relu, 1 linear)
//   per layer: weights (width x fan_in, row-major f64), then bias (width f64)
//
// All integers and floats little-endian. Nothing may follow the last block.
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kModelFormatVersion = 1;
inline constexpr std::array<char, 5> kModelMagic = {'N', 'F', 'M', 'L', 'P'};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v = 0.0;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  void need(std::size_t n) const {
    if (remaining() < n) fail(ErrorKind::truncated_file, "model file ends early at byte " + std::to_string(pos_));
  }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_model(const MlpModel& model) {
  std::string out(kModelMagic.begin(), kModelMagic.end());
  out.push_back(static_cast<char>(kModelFormatVersion));
  out.push_back(static_cast<char>(model.use_bias() ? 1 : 0));
  detail::put_u64(out, static_cast<std::uint64_t>(model.input_dim()));
  detail::put_u64(out, model.layers().size());
  for (const auto& layer : model.layers()) {
    detail::put_u64(out, static_cast<std::uint64_t>(layer.width()));
    out.push_back(static_cast<char>(layer.activation));
  }
  for (const auto& layer : model.layers()) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) detail::put_f64(out, layer.weights(r, c));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) detail::put_f64(out, layer.bias[r]);
  }
  return out;
}

inline MlpModel decode_model(const std::string& bytes) {
  detail::ByteReader in(bytes);
  in.need(kModelMagic.size());
  for (char expected : kModelMagic) {
    if (static_cast<char>(in.u8()) != expected) fail(ErrorKind::format_version, "not a model file (bad magic)");
  }
  const std::uint8_t version = in.u8();
  if (version != kModelFormatVersion) {
    fail(ErrorKind::format_version, "model format version " + std::to_string(version) + ", expected " +
                                        std::to_string(kModelFormatVersion));
  }
  const std::uint8_t flags = in.u8();
  if (flags > 1) fail(ErrorKind::shape_mismatch, "unknown flag bits in model header");
  const bool use_bias = (flags & 1u) != 0;

  constexpr std::uint64_t kMaxDim = 1u << 20;
  const std::uint64_t input_dim = in.u64();
  const std::uint64_t layer_count = in.u64();
  if (input_dim < 1 || input_dim > kMaxDim) fail(ErrorKind::shape_mismatch, "implausible input dimension");
  if (layer_count < 1 || layer_count > 4096) fail(ErrorKind::shape_mismatch, "implausible layer count");

  std::vector<LayerSpec> specs;
  for (std::uint64_t i = 0; i < layer_count; ++i) {
    const std::uint64_t width = in.u64();
    const std::uint8_t act = in.u8();
    if (width < 1 || width > kMaxDim) fail(ErrorKind::shape_mismatch, "implausible width in layer " + std::to_string(i));
    if (act > 1) fail(ErrorKind::shape_mismatch, "unknown activation code in layer " + std::to_string(i));
    specs.push_back({static_cast<int>(width), static_cast<Activation>(act)});
  }

  std::uint64_t needed = 0;
  std::uint64_t fan_in = input_dim;
  for (const auto& spec : specs) {
    needed += 8 * (static_cast<std::uint64_t>(spec.width) * fan_in + spec.width);
    fan_in = spec.width;
  }
  in.need(needed);
  if (in.remaining() != needed) fail(ErrorKind::shape_mismatch, "model file has trailing bytes");

  std::vector<DenseLayer> layers;
  fan_in = input_dim;
  for (const auto& spec : specs) {
    DenseLayer layer;
    layer.activation = spec.activation;
    layer.weights.resize(spec.width, static_cast<Eigen::Index>(fan_in));
    layer.bias.resize(spec.width);
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = in.f64();
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias[r] = in.f64();
    layers.push_back(std::move(layer));
    fan_in = spec.width;
  }
  try {
    return MlpModel(static_cast<int>(input_dim), std::move(layers), use_bias);
  } catch (const Error& e) {
    fail(ErrorKind::shape_mismatch, std::string("inconsistent model file: ") + e.what());
  }
}

inline void save_model(const MlpModel& model, const std::filesystem::path& path) {
  const std::string bytes = encode_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

inline MlpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

}  // namespace nf
