#pragma once

// Continuous-time benchmark systems, an adaptive Dormand-Prince integrator
// over one sampling interval, and noisy ground-truth simulation.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "neural_filter/error.hpp"

namespace nf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using StateVector = Vector;
using ControlInput = Vector;
using ParamMap = std::map<std::string, double>;

inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// A named vector field dx/dt = f(x, u) with a fixed state and input dimension.
///
/// The right-hand side is stored with its parameters already bound, so the
/// hot integration loop never touches the parameter map.
class OdeSystem {
 public:
  using Rhs = std::function<Vector(const Vector& x, const Vector& u)>;

  OdeSystem(std::string name, int dim, int input_dim, ParamMap params, Rhs rhs)
      : name_(std::move(name)), dim_(dim), input_dim_(input_dim), params_(std::move(params)),
        rhs_(std::move(rhs)) {
    if (dim_ < 1) fail(ErrorKind::invalid_argument, "system '" + name_ + "' needs dim >= 1");
    if (input_dim_ < 0) fail(ErrorKind::invalid_argument, "negative input dimension");
    for (const auto& [key, value] : params_) {
      if (!std::isfinite(value)) fail(ErrorKind::invalid_argument, "parameter '" + key + "' is not finite");
    }
  }

  const std::string& name() const noexcept { return name_; }
  int dim() const noexcept { return dim_; }
  int input_dim() const noexcept { return input_dim_; }
  const ParamMap& params() const noexcept { return params_; }

  double param(const std::string& key) const {
    auto it = params_.find(key);
    if (it == params_.end()) fail(ErrorKind::invalid_argument, name_ + " has no parameter '" + key + "'");
    return it->second;
  }

  /// Unchecked evaluation; used inside the integrator after validation.
  Vector rhs_unchecked(const Vector& x, const Vector& u) const { return rhs_(x, u); }

 private:
  std::string name_;
  int dim_;
  int input_dim_;
  ParamMap params_;
  Rhs rhs_;
};

inline ControlInput no_input() { return ControlInput(0); }

/// dx/dt for the given state and input.
inline StateVector eval_rhs(const OdeSystem& system, const StateVector& x, const ControlInput& u) {
  if (x.size() != system.dim()) {
    fail(ErrorKind::invalid_argument, "state has length " + std::to_string(x.size()) + ", " + system.name() +
                                          " expects " + std::to_string(system.dim()));
  }
  if (u.size() != system.input_dim()) fail(ErrorKind::invalid_argument, "control input has wrong length");
  if (!all_finite(x)) fail(ErrorKind::invalid_state, "non-finite state passed to " + system.name());
  if (!all_finite(u)) fail(ErrorKind::invalid_state, "non-finite input passed to " + system.name());
  Vector dx = system.rhs_unchecked(x, u);
  if (dx.size() != system.dim()) fail(ErrorKind::invalid_state, "rhs of " + system.name() + " returned wrong length");
  return dx;
}

namespace systems {

namespace detail {

inline ParamMap merge(ParamMap defaults, const ParamMap& overrides, const std::string& name) {
  for (const auto& [key, value] : overrides) {
    auto it = defaults.find(key);
    if (it == defaults.end()) fail(ErrorKind::invalid_argument, name + " has no parameter '" + key + "'");
    it->second = value;
  }
  return defaults;
}

inline void require_positive(const ParamMap& params, std::initializer_list<const char*> keys, const std::string& name) {
  for (const char* key : keys) {
    const double value = params.at(key);
    if (!(value > 0.0) || !std::isfinite(value)) {
      fail(ErrorKind::invalid_argument, name + " parameter '" + key + "' must be finite and > 0");
    }
  }
}

}  // namespace detail

/// l*theta'' + g*sin(theta) = 0, state [theta, theta'].
inline OdeSystem pendulum(const ParamMap& overrides = {}) {
  ParamMap p = detail::merge({{"g", 9.81}, {"l", 1.0}}, overrides, "pendulum");
  detail::require_positive(p, {"l"}, "pendulum");
  const double g_over_l = p.at("g") / p.at("l");
  return OdeSystem("pendulum", 2, 0, p, [g_over_l](const Vector& x, const Vector&) {
    Vector dx(2);
    dx << x[1], -g_over_l * std::sin(x[0]);
    return dx;
  });
}

/// q'' - mu*(1 - q^2)*q' + q = 0, state [q, q'].
inline OdeSystem van_der_pol(const ParamMap& overrides = {}) {
  ParamMap p = detail::merge({{"mu", 1.0}}, overrides, "van_der_pol");
  const double mu = p.at("mu");
  return OdeSystem("van_der_pol", 2, 0, p, [mu](const Vector& x, const Vector&) {
    Vector dx(2);
    dx << x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
    return dx;
  });
}

inline OdeSystem lorenz(const ParamMap& overrides = {}) {
  ParamMap p = detail::merge({{"sigma", 10.0}, {"rho", 28.0}, {"beta", 8.0 / 3.0}}, overrides, "lorenz");
  const double sigma = p.at("sigma");
  const double rho = p.at("rho");
  const double beta = p.at("beta");
  return OdeSystem("lorenz", 3, 0, p, [sigma, rho, beta](const Vector& x, const Vector&) {
    Vector dx(3);
    dx << sigma * (x[1] - x[0]), x[0] * (rho - x[2]) - x[1], x[0] * x[1] - beta * x[2];
    return dx;
  });
}

/// Determinant below which the double-pendulum mass matrix counts as singular.
inline constexpr double kMassMatrixDetFloor = 1e-12;

/// Planar double pendulum with state [theta1, theta1', theta2, theta2'].
///
/// Solves M(theta) * theta'' = T - D(theta, theta') by explicit 2x2 inversion.
/// T = [tau_ext, 0] with tau_ext = 0; the system is autonomous.
inline OdeSystem double_pendulum(const ParamMap& overrides = {}) {
  ParamMap p = detail::merge({{"m1", 1.0}, {"m2", 1.0}, {"l1", 1.0}, {"l2", 1.0}, {"g", 9.81}}, overrides,
                             "double_pendulum");
  detail::require_positive(p, {"m1", "m2", "l1", "l2"}, "double_pendulum");
  const double m1 = p.at("m1"), m2 = p.at("m2"), l1 = p.at("l1"), l2 = p.at("l2"), g = p.at("g");
  return OdeSystem("double_pendulum", 4, 0, p, [=](const Vector& x, const Vector&) {
    const double th1 = x[0], w1 = x[1], th2 = x[2], w2 = x[3];
    const double phi = th2 - th1;
    const double c = std::cos(phi), s = std::sin(phi);

    const double m00 = (m1 + m2) * l1 * l1;
    const double m01 = m2 * l1 * l2 * c;
    const double m10 = l1 * c;
    const double m11 = l2;
    const double d0 = -m2 * l1 * l2 * s * w2 * w2 + (m1 + m2) * g * l1 * std::sin(th1);
    const double d1 = l1 * s * w1 * w1 + g * std::sin(th2);
    const double r0 = -d0;
    const double r1 = -d1;

    const double det = m00 * m11 - m01 * m10;
    if (std::abs(det) < kMassMatrixDetFloor) {
      fail(ErrorKind::degenerate_configuration, "double pendulum mass matrix is singular");
    }
    Vector dx(4);
    dx << w1, (m11 * r0 - m01 * r1) / det, w2, (m00 * r1 - m10 * r0) / det;
    return dx;
  });
}

/// Builds one of the shipped systems by name.
inline OdeSystem by_name(const std::string& name, const ParamMap& overrides = {}) {
  if (name == "pendulum") return pendulum(overrides);
  if (name == "van_der_pol") return van_der_pol(overrides);
  if (name == "lorenz") return lorenz(overrides);
  if (name == "double_pendulum") return double_pendulum(overrides);
  fail(ErrorKind::invalid_argument, "unknown system '" + name + "'");
}

/// Parameter names accepted by by_name for each system.
inline std::vector<std::string> parameter_names(const std::string& name) {
  const OdeSystem system = by_name(name);
  std::vector<std::string> keys;
  for (const auto& [key, value] : system.params()) keys.push_back(key);
  return keys;
}

}  // namespace systems

struct IntegratorConfig {
  double rel_tol = 1e-9;
  double abs_tol = 1e-9;
  std::size_t max_steps = 1'000'000;
  /// Zero means t_span / 100.
  double initial_step = 0.0;

  void validate() const {
    if (!(rel_tol > 0.0 && rel_tol < 1.0) || !(abs_tol > 0.0 && abs_tol < 1.0)) {
      fail(ErrorKind::invalid_argument, "integrator tolerances must lie in (0, 1)");
    }
    if (max_steps < 1) fail(ErrorKind::invalid_argument, "max_steps must be >= 1");
    if (initial_step < 0.0 || !std::isfinite(initial_step)) {
      fail(ErrorKind::invalid_argument, "initial_step must be finite and >= 0");
    }
  }
};

/// Dormand-Prince 5(4) with FSAL and standard step-size control, from t = 0
/// to t_span. `f` maps a state to its derivative.
template <class Field>
Vector integrate_dopri5(Field&& f, const Vector& x0, double t_span, const IntegratorConfig& cfg) {
  cfg.validate();
  if (!(t_span > 0.0) || !std::isfinite(t_span)) fail(ErrorKind::invalid_argument, "t_span must be > 0");
  if (!all_finite(x0)) fail(ErrorKind::invalid_state, "non-finite initial state");

  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                   a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  // fifth-order minus embedded fourth-order weights
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                   e6 = 22.0 / 525, e7 = -1.0 / 40;
  (void)c2; (void)c3; (void)c4; (void)c5;  // autonomous fields; stage times unused

  constexpr double safety = 0.9, min_factor = 0.2, max_factor = 10.0;

  Vector x = x0;
  double t = 0.0;
  double h = cfg.initial_step > 0.0 ? cfg.initial_step : t_span / 100.0;
  h = std::min(h, t_span);
  const double h_floor = 1e-14 * t_span;

  Vector k1 = f(x);
  Vector k2, k3, k4, k5, k6, k7, stage, x_new;
  std::size_t steps = 0;
  bool last_rejected = false;

  while (t < t_span) {
    if (++steps > cfg.max_steps) {
      fail(ErrorKind::integration_failure, "exceeded " + std::to_string(cfg.max_steps) + " steps at t=" +
                                               std::to_string(t));
    }
    const bool final_step = t + h >= t_span;
    if (final_step) h = t_span - t;

    stage = x + h * (a21 * k1);
    k2 = f(stage);
    stage = x + h * (a31 * k1 + a32 * k2);
    k3 = f(stage);
    stage = x + h * (a41 * k1 + a42 * k2 + a43 * k3);
    k4 = f(stage);
    stage = x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    k5 = f(stage);
    stage = x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    k6 = f(stage);
    x_new = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    k7 = f(x_new);

    if (!all_finite(x_new) || !all_finite(k7)) {
      fail(ErrorKind::divergence, "non-finite state during integration at t=" + std::to_string(t));
    }

    const Vector err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double err_sq = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double scale = cfg.abs_tol + cfg.rel_tol * std::max(std::abs(x[i]), std::abs(x_new[i]));
      const double r = err_vec[i] / scale;
      err_sq += r * r;
    }
    const double err = std::sqrt(err_sq / static_cast<double>(x.size()));

    if (err <= 1.0) {
      t = final_step ? t_span : t + h;
      x = x_new;
      k1 = k7;
      double factor = err == 0.0 ? max_factor : std::clamp(safety * std::pow(err, -0.2), min_factor, max_factor);
      if (last_rejected) factor = std::min(factor, 1.0);
      h *= factor;
      last_rejected = false;
    } else {
      h *= std::max(min_factor, safety * std::pow(err, -0.2));
      last_rejected = true;
      if (h < h_floor) fail(ErrorKind::integration_failure, "step size underflow at t=" + std::to_string(t));
    }
  }
  return x;
}

/// x(t_span) from x0 with u held constant over the interval.
inline StateVector integrate_interval(const OdeSystem& system, const StateVector& x0, const ControlInput& u,
                                      double t_span, const IntegratorConfig& cfg = {}) {
  (void)eval_rhs(system, x0, u);  // validates shapes and finiteness
  return integrate_dopri5([&](const Vector& x) { return system.rhs_unchecked(x, u); }, x0, t_span, cfg);
}

/// Linear measurement y = C x + v with v ~ N(0, sigma_v^2 I).
struct MeasurementModel {
  Matrix c_matrix;
  double sigma_v = 0.0;

  MeasurementModel() = default;
  MeasurementModel(Matrix c, double sigma) : c_matrix(std::move(c)), sigma_v(sigma) {
    if (!std::isfinite(sigma_v) || sigma_v < 0.0) fail(ErrorKind::invalid_argument, "sigma_v must be finite and >= 0");
    if (!c_matrix.allFinite()) fail(ErrorKind::invalid_argument, "measurement matrix has non-finite entries");
  }

  int meas_dim() const noexcept { return static_cast<int>(c_matrix.rows()); }
  int state_dim() const noexcept { return static_cast<int>(c_matrix.cols()); }

  Matrix r_matrix() const {
    return sigma_v * sigma_v * Matrix::Identity(meas_dim(), meas_dim());
  }

  /// Jacobian of the measurement map at x. Constant for the linear model.
  const Matrix& jacobian(const Vector& /*x*/) const { return c_matrix; }
};

/// Selects the listed state components (zero-based).
inline Matrix selection_matrix(int state_dim, const std::vector<int>& rows) {
  Matrix c = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), state_dim);
  for (std::size_t r = 0; r < rows.size(); ++r) c(static_cast<Eigen::Index>(r), rows[r]) = 1.0;
  return c;
}

inline Vector measure(const MeasurementModel& model, const StateVector& x, const Vector& noise) {
  if (x.size() != model.state_dim()) fail(ErrorKind::invalid_argument, "state length does not match C columns");
  if (noise.size() != model.meas_dim()) fail(ErrorKind::invalid_argument, "noise length does not match C rows");
  return model.c_matrix * x + noise;
}

struct Trajectory {
  double ts = 0.0;
  int state_dim = 0;
  int meas_dim = 0;
  std::vector<double> times;
  std::vector<StateVector> true_states;
  std::vector<Vector> measurements;

  std::size_t size() const noexcept { return times.size(); }
  bool empty() const noexcept { return times.empty(); }
};

/// Ground truth and measurements for `steps` samples at k = 0 .. steps-1.
///
/// Process noise is zero; measurement noise is drawn per row from a standard
/// normal stream seeded with `seed` and scaled by sigma_v.
inline Trajectory simulate_truth(const OdeSystem& system, const MeasurementModel& model, const StateVector& x0,
                                 std::size_t steps, double ts, const IntegratorConfig& cfg, std::uint64_t seed) {
  if (steps < 1) fail(ErrorKind::invalid_argument, "steps must be >= 1");
  if (!(ts > 0.0)) fail(ErrorKind::invalid_argument, "ts must be > 0");
  if (model.state_dim() != system.dim()) fail(ErrorKind::invalid_argument, "measurement matrix does not match system");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> standard_normal(0.0, 1.0);
  const ControlInput u = ControlInput::Zero(system.input_dim());

  Trajectory traj;
  traj.ts = ts;
  traj.state_dim = system.dim();
  traj.meas_dim = model.meas_dim();
  traj.times.reserve(steps);
  traj.true_states.reserve(steps);
  traj.measurements.reserve(steps);

  StateVector x = x0;
  for (std::size_t k = 0; k < steps; ++k) {
    if (k > 0) x = integrate_interval(system, x, u, ts, cfg);
    Vector noise(model.meas_dim());
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = model.sigma_v * standard_normal(rng);
    traj.times.push_back(static_cast<double>(k) * ts);
    traj.true_states.push_back(x);
    traj.measurements.push_back(measure(model, x, noise));
  }
  return traj;
}

}  // namespace nf
