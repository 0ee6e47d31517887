#pragma once

// One-step flow datasets and mini-batch Adam training of MlpModel.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "neural_filter/dynamics.hpp"
#include "neural_filter/error.hpp"
#include "neural_filter/mlp.hpp"

namespace nf {

/// Axis-aligned box that initial states are drawn from.
struct SampleBox {
  Vector lower;
  Vector upper;

  void validate(int dim) const {
    if (lower.size() != dim || upper.size() != dim) fail(ErrorKind::invalid_argument, "sample box has wrong dimension");
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
      if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) || !(lower[i] < upper[i])) {
        fail(ErrorKind::invalid_argument, "sample box needs finite lower < upper in every dimension");
      }
    }
  }
};

/// Paired samples, one per row: inputs x(0), targets x(ts).
struct Dataset {
  Matrix inputs;
  Matrix targets;
  double ts = 0.0;

  Eigen::Index size() const noexcept { return inputs.rows(); }
  Eigen::Index input_dim() const noexcept { return inputs.cols(); }
  Eigen::Index target_dim() const noexcept { return targets.cols(); }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.ts == b.ts && a.inputs.rows() == b.inputs.rows() && a.inputs.cols() == b.inputs.cols() &&
           a.targets.rows() == b.targets.rows() && a.targets.cols() == b.targets.cols() && a.inputs == b.inputs &&
           a.targets == b.targets;
  }
};

struct TrainConfig {
  std::size_t batch_size = 32;
  double split_fraction = 0.8;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 200;
  std::size_t validation_every = 30;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) fail(ErrorKind::invalid_argument, "batch_size must be >= 1");
    if (!(split_fraction > 0.0 && split_fraction < 1.0)) fail(ErrorKind::invalid_argument, "split_fraction must lie in (0, 1)");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail(ErrorKind::invalid_argument, "learning_rate must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
      fail(ErrorKind::invalid_argument, "Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps >= 0.0) || !std::isfinite(adam_eps)) fail(ErrorKind::invalid_argument, "adam_eps must be >= 0");
    if (validation_every < 1) fail(ErrorKind::invalid_argument, "validation_every must be >= 1");
  }
};

/// Raw per-iteration losses. Iterations are 1-based; validation entries
/// land on multiples of validation_every.
struct LossTrace {
  std::vector<std::size_t> iterations;
  std::vector<double> train_losses;
  std::vector<std::size_t> val_iterations;
  std::vector<double> val_losses;

  bool empty() const noexcept { return iterations.empty(); }

  friend bool operator==(const LossTrace&, const LossTrace&) = default;
};

/// Trailing moving average, applied to each loss series separately.
inline LossTrace smooth(const LossTrace& raw, std::size_t window = 25) {
  auto average = [window](const std::vector<double>& xs) {
    std::vector<double> out(xs.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sum += xs[i];
      if (i >= window) sum -= xs[i - window];
      out[i] = sum / static_cast<double>(std::min(i + 1, window));
    }
    return out;
  };
  LossTrace out = raw;
  out.train_losses = average(raw.train_losses);
  out.val_losses = average(raw.val_losses);
  return out;
}

/// Raised when the loss or a gradient turns non-finite. Carries the trace
/// recorded up to the failing iteration.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, LossTrace trace)
      : Error(ErrorKind::training_divergence, what), trace_(std::move(trace)) {}

  const LossTrace& trace() const noexcept { return trace_; }

 private:
  LossTrace trace_;
};

/// Draws n_samples initial states uniformly from the box and integrates each
/// over one interval of length ts.
inline Dataset generate_dataset(const OdeSystem& system, const SampleBox& box, std::size_t n_samples, double ts,
                                const IntegratorConfig& cfg, std::uint64_t seed) {
  if (n_samples < 1) fail(ErrorKind::invalid_argument, "n_samples must be >= 1");
  if (!(ts > 0.0)) fail(ErrorKind::invalid_argument, "ts must be > 0");
  box.validate(system.dim());
  cfg.validate();

  const auto n = static_cast<Eigen::Index>(n_samples);
  Dataset d;
  d.ts = ts;
  d.inputs.resize(n, system.dim());
  d.targets.resize(n, system.dim());

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const ControlInput u = ControlInput::Zero(system.input_dim());
  Vector x0(system.dim());
  for (Eigen::Index s = 0; s < n; ++s) {
    for (Eigen::Index i = 0; i < x0.size(); ++i) x0[i] = box.lower[i] + (box.upper[i] - box.lower[i]) * unit(rng);
    d.inputs.row(s) = x0.transpose();
    try {
      d.targets.row(s) = integrate_interval(system, x0, u, ts, cfg).transpose();
    } catch (const Error& e) {
      fail(e.kind(), "sample " + std::to_string(s) + ": " + e.what());
    }
  }
  return d;
}

inline Dataset select_rows(const Dataset& d, const std::vector<Eigen::Index>& rows) {
  Dataset out;
  out.ts = d.ts;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), d.input_dim());
  out.targets.resize(static_cast<Eigen::Index>(rows.size()), d.target_dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.inputs.row(static_cast<Eigen::Index>(i)) = d.inputs.row(rows[i]);
    out.targets.row(static_cast<Eigen::Index>(i)) = d.targets.row(rows[i]);
  }
  return out;
}

/// Seeded shuffle, then the first floor(n * fraction) rows go to training.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) fail(ErrorKind::invalid_argument, "split fraction must lie in (0, 1)");
  const auto n = static_cast<std::size_t>(d.size());
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
  if (n_train == 0 || n_train == n) {
    fail(ErrorKind::invalid_argument, "split of " + std::to_string(n) + " rows leaves an empty partition");
  }
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Eigen::Index> train_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<Eigen::Index> val_rows(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return {select_rows(d, train_rows), select_rows(d, val_rows)};
}

struct AdamMoments {
  Vector m;
  Vector v;

  static AdamMoments zeros(Eigen::Index n) { return {Vector::Zero(n), Vector::Zero(n)}; }
};

/// One Adam update at step t (1-based), in place.
inline void adam_step(Eigen::Ref<Vector> params, const Vector& grads, AdamMoments& moments, std::size_t t,
                      const TrainConfig& cfg) {
  if (grads.size() != params.size() || moments.m.size() != params.size() || moments.v.size() != params.size()) {
    fail(ErrorKind::shape_mismatch, "Adam parameter, gradient and moment shapes differ");
  }
  if (t < 1) fail(ErrorKind::invalid_argument, "Adam step index starts at 1");
  if (!grads.allFinite()) fail(ErrorKind::training_divergence, "non-finite gradient at step " + std::to_string(t));

  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  moments.m = b1 * moments.m + (1.0 - b1) * grads;
  moments.v = b2 * moments.v + (1.0 - b2) * grads.cwiseProduct(grads);
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t));
  params.array() -= cfg.learning_rate * (moments.m.array() / correction1) /
                    ((moments.v.array() / correction2).sqrt() + cfg.adam_eps);
}

namespace detail {

/// Mean squared error of the model on column-sample matrices, and the
/// packed gradient of that loss when `grad` is non-null.
inline double batch_loss(const MlpModel& model, const Matrix& x, const Matrix& y, Vector* grad) {
  const auto& layers = model.layers();
  std::vector<Matrix> activations;
  activations.reserve(layers.size() + 1);
  activations.push_back(x);
  for (const auto& layer : layers) {
    Matrix z = layer.weights * activations.back();
    z.colwise() += layer.bias;
    if (layer.activation == Activation::relu) z = z.cwiseMax(0.0);
    activations.push_back(std::move(z));
  }
  const Matrix residual = activations.back() - y;
  const double denom = static_cast<double>(residual.size());
  const double loss = residual.squaredNorm() / denom;
  if (grad == nullptr) return loss;

  grad->resize(model.parameter_count());
  // walk backwards; offsets follow MlpModel::flatten()
  std::vector<Eigen::Index> offsets;
  Eigen::Index pos = 0;
  for (const auto& layer : layers) {
    offsets.push_back(pos);
    pos += layer.weights.size() + (model.use_bias() ? layer.bias.size() : 0);
  }
  Matrix delta = (2.0 / denom) * residual;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const DenseLayer& layer = layers[li];
    const Matrix& input = activations[li];
    if (layer.activation == Activation::relu) {
      // activation > 0 exactly when the preactivation was > 0
      delta = delta.cwiseProduct((activations[li + 1].array() > 0.0).cast<double>().matrix());
    }
    Eigen::Map<Matrix>(grad->data() + offsets[li], layer.weights.rows(), layer.weights.cols()) =
        delta * input.transpose();
    if (model.use_bias()) grad->segment(offsets[li] + layer.weights.size(), layer.bias.size()) = delta.rowwise().sum();
    if (li > 0) delta = layer.weights.transpose() * delta;
  }
  return loss;
}

inline void check_dims(const MlpModel& model, const Dataset& d, const char* which) {
  if (d.input_dim() != model.input_dim() || d.target_dim() != model.output_dim()) {
    fail(ErrorKind::shape_mismatch, std::string(which) + " dimensions do not match the model");
  }
}

}  // namespace detail

/// Mean squared error over every sample and output component.
inline double mse(const MlpModel& model, const Dataset& d) {
  detail::check_dims(model, d, "dataset");
  return detail::batch_loss(model, d.inputs.transpose(), d.targets.transpose(), nullptr);
}

/// Packed gradient of mse(model, d) via backpropagation.
inline Vector loss_gradient(const MlpModel& model, const Dataset& d) {
  detail::check_dims(model, d, "dataset");
  Vector grad;
  detail::batch_loss(model, d.inputs.transpose(), d.targets.transpose(), &grad);
  return grad;
}

struct TrainResult {
  MlpModel model;
  LossTrace trace;
};

/// Mini-batch Adam on an explicit train/validation pair.
inline TrainResult train(MlpModel model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg) {
  cfg.validate();
  detail::check_dims(model, train_set, "training set");
  detail::check_dims(model, val_set, "validation set");
  if (train_set.size() < 1) fail(ErrorKind::invalid_argument, "training set is empty");

  TrainResult result{std::move(model), {}};
  if (cfg.epochs == 0) return result;

  const Matrix xs = train_set.inputs.transpose();
  const Matrix ys = train_set.targets.transpose();
  const Matrix val_x = val_set.inputs.transpose();
  const Matrix val_y = val_set.targets.transpose();
  const Eigen::Index n = xs.cols();
  const auto batch = static_cast<Eigen::Index>(cfg.batch_size);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(cfg.seed);

  Vector params = result.model.flatten();
  AdamMoments moments = AdamMoments::zeros(params.size());
  Vector grad;
  Matrix bx, by;
  std::size_t iteration = 0;
  LossTrace& trace = result.trace;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index count = std::min(batch, n - start);
      bx.resize(xs.rows(), count);
      by.resize(ys.rows(), count);
      for (Eigen::Index j = 0; j < count; ++j) {
        bx.col(j) = xs.col(order[static_cast<std::size_t>(start + j)]);
        by.col(j) = ys.col(order[static_cast<std::size_t>(start + j)]);
      }
      ++iteration;
      const double loss = detail::batch_loss(result.model, bx, by, &grad);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("non-finite training loss at iteration " + std::to_string(iteration), trace);
      }
      trace.iterations.push_back(iteration);
      trace.train_losses.push_back(loss);
      try {
        adam_step(params, grad, moments, iteration, cfg);
      } catch (const Error& e) {
        throw TrainingDiverged(e.what(), trace);
      }
      if (!params.allFinite()) {
        throw TrainingDiverged("non-finite parameters at iteration " + std::to_string(iteration), trace);
      }
      result.model.set_parameters(params);

      if (iteration % cfg.validation_every == 0 && val_x.cols() > 0) {
        const double val = detail::batch_loss(result.model, val_x, val_y, nullptr);
        if (!std::isfinite(val)) {
          throw TrainingDiverged("non-finite validation loss at iteration " + std::to_string(iteration), trace);
        }
        trace.val_iterations.push_back(iteration);
        trace.val_losses.push_back(val);
      }
    }
  }
  return result;
}

/// Splits `d` with cfg.split_fraction (seeded by cfg.seed), then trains.
inline TrainResult train(MlpModel model, const Dataset& d, const TrainConfig& cfg) {
  cfg.validate();
  auto [train_set, val_set] = split_dataset(d, cfg.split_fraction, cfg.seed);
  return train(std::move(model), train_set, val_set, cfg);
}

}  // namespace nf
