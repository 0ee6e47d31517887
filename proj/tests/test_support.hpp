#pragma once

#include <cmath>
#include <initializer_list>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "neural_filter/neural_filter.hpp"

namespace testing_support {

inline nf::Vector vec(std::initializer_list<double> xs) {
  nf::Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

/// Kind of the nf::Error thrown by fn; records a failure if nothing is thrown.
template <class Fn>
nf::ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const nf::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an nf::Error";
  return nf::ErrorKind::io;
}

/// ReLU hidden layers plus a linear output, every parameter (biases too)
/// drawn from N(0, 1 / fan_in).
inline nf::MlpModel random_model(int input_dim, const std::vector<int>& hidden, int output_dim, std::mt19937_64& rng,
                                 bool use_bias = true) {
  std::vector<nf::LayerSpec> specs;
  for (int w : hidden) specs.push_back({w, nf::Activation::relu});
  specs.push_back({output_dim, nf::Activation::linear});
  nf::MlpModel model = nf::init_model(input_dim, specs, rng(), use_bias);
  std::vector<nf::DenseLayer> layers = model.layers();
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& layer : layers) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer.fan_in()));
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = scale * normal(rng);
    if (use_bias) {
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = 0.5 * normal(rng);
    }
  }
  return nf::MlpModel(input_dim, std::move(layers), use_bias);
}

/// Smallest |preactivation| over every hidden ReLU unit at x.
inline double min_hidden_margin(const nf::MlpModel& model, const nf::Vector& x) {
  double margin = INFINITY;
  nf::Vector a = x;
  for (const auto& layer : model.layers()) {
    nf::Vector z = layer.weights * a + layer.bias;
    if (layer.activation == nf::Activation::relu) {
      margin = std::min(margin, z.cwiseAbs().minCoeff());
      z = z.cwiseMax(0.0);
    }
    a = z;
  }
  return margin;
}

}  // namespace testing_support
