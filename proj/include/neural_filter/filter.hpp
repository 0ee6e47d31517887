#pragma once

// Neural filter: extended-Kalman-style recursion whose transition model is a
// trained MlpModel and whose transition Jacobian is the network's analytic
// input-Jacobian. Also the uncorrected open-loop rollout used as baseline.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "neural_filter/dynamics.hpp"
#include "neural_filter/error.hpp"
#include "neural_filter/mlp.hpp"

namespace nf {

/// Condition number above which the innovation covariance is rejected.
inline constexpr double kMaxInnovationCondition = 1e12;

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

struct FilterState {
  Vector x_hat;
  Matrix p_matrix;
  std::size_t step = 0;
};

struct FilterConfig {
  Matrix q_matrix;
  MeasurementModel measurement;
  Matrix p0;
  Vector x0_hat;

  void validate(int state_dim) const {
    auto check_cov = [state_dim](const Matrix& m, const char* name) {
      if (m.rows() != state_dim || m.cols() != state_dim) {
        fail(ErrorKind::invalid_argument, std::string(name) + " must be " + std::to_string(state_dim) + "x" +
                                              std::to_string(state_dim));
      }
      if (!m.allFinite() || !m.isApprox(m.transpose(), 1e-12)) {
        fail(ErrorKind::invalid_argument, std::string(name) + " must be finite and symmetric");
      }
      if (Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff() < -1e-12) {
        fail(ErrorKind::invalid_argument, std::string(name) + " must be positive semidefinite");
      }
    };
    check_cov(q_matrix, "Q");
    check_cov(p0, "P0");
    if (x0_hat.size() != state_dim || !x0_hat.allFinite()) fail(ErrorKind::invalid_argument, "x0_hat has wrong length");
    if (measurement.state_dim() != state_dim) fail(ErrorKind::invalid_argument, "measurement matrix does not match state");
  }
};

/// x_{k+1|k} = NN(x_{k|k}) and P_{k+1|k} = A P A^T + Q with A = dNN/dx at x_{k|k}.
struct Prediction {
  Vector x_prior;
  Matrix p_prior;
  Matrix transition;
};

inline Prediction predict(const MlpModel& model, const FilterState& state, const ControlInput& u,
                          const FilterConfig& cfg) {
  if (u.size() != 0) fail(ErrorKind::invalid_argument, "surrogate models take no control input");
  if (state.x_hat.size() != model.input_dim() || model.output_dim() != model.input_dim()) {
    fail(ErrorKind::invalid_argument, "filter state does not match model dimensions");
  }
  Prediction out;
  out.x_prior = forward(model, state.x_hat);
  if (!out.x_prior.allFinite()) {
    fail(ErrorKind::filter_divergence, "network produced a non-finite prior at step " + std::to_string(state.step));
  }
  out.transition = jacobian_input(model, state.x_hat);
  out.p_prior = symmetrize(out.transition * state.p_matrix * out.transition.transpose() + cfg.q_matrix);
  if (!out.p_prior.allFinite()) {
    fail(ErrorKind::filter_divergence, "prior covariance is non-finite at step " + std::to_string(state.step));
  }
  return out;
}

struct Correction {
  FilterState state;
  Matrix gain;
};

/// Measurement correction. The measurement Jacobian is taken at the prior.
inline Correction update(const Vector& x_prior, const Matrix& p_prior, const Vector& y, const FilterConfig& cfg,
                         std::size_t step = 0) {
  const MeasurementModel& meas = cfg.measurement;
  if (y.size() != meas.meas_dim()) fail(ErrorKind::invalid_argument, "measurement has wrong length");
  if (x_prior.size() != meas.state_dim() || p_prior.rows() != x_prior.size() || p_prior.cols() != x_prior.size()) {
    fail(ErrorKind::invalid_argument, "prior does not match measurement model");
  }
  const Matrix& c = meas.jacobian(x_prior);
  const Matrix innovation_cov = symmetrize(c * p_prior * c.transpose() + meas.r_matrix());

  Correction out;
  out.state.step = step;
  if (innovation_cov.size() > 0) {
    const Vector eig = Eigen::SelfAdjointEigenSolver<Matrix>(innovation_cov, Eigen::EigenvaluesOnly).eigenvalues();
    const double lo = eig.minCoeff(), hi = eig.maxCoeff();
    if (!(lo > 0.0) || hi / lo > kMaxInnovationCondition) {
      fail(ErrorKind::numerical_failure, "innovation covariance is singular or ill-conditioned at step " +
                                             std::to_string(step));
    }
    // K = P C^T S^-1 = (S^-1 C P)^T since P and S are symmetric
    out.gain = innovation_cov.llt().solve(c * p_prior).transpose();
  } else {
    out.gain = Matrix::Zero(x_prior.size(), 0);
  }
  const Vector innovation = y - meas.c_matrix * x_prior;
  out.state.x_hat = x_prior + out.gain * innovation;
  const Matrix identity = Matrix::Identity(x_prior.size(), x_prior.size());
  out.state.p_matrix = symmetrize((identity - out.gain * c) * p_prior);
  if (!out.state.x_hat.allFinite() || !out.state.p_matrix.allFinite()) {
    fail(ErrorKind::filter_divergence, "non-finite posterior at step " + std::to_string(step));
  }
  return out;
}

/// Per-step filter output. Row k describes step k; row 0 is the initial
/// condition with prior = posterior and a zero gain.
struct FilterRecord {
  std::vector<Vector> priors;
  std::vector<Vector> posteriors;
  std::vector<Matrix> gains;
  std::vector<Matrix> covariances;
  std::vector<double> trace_p;
  /// ||x_k - x_hat_{k|k}||; NaN when no truth was supplied.
  std::vector<double> error_norms;
  /// First step whose state or covariance became non-finite (open loop only).
  std::optional<std::size_t> divergence_step;

  std::size_t size() const noexcept { return posteriors.size(); }
  bool empty() const noexcept { return posteriors.empty(); }

  void push(Vector prior, Vector posterior, Matrix gain, Matrix cov, double error_norm) {
    priors.push_back(std::move(prior));
    posteriors.push_back(std::move(posterior));
    gains.push_back(std::move(gain));
    trace_p.push_back(cov.trace());
    covariances.push_back(std::move(cov));
    error_norms.push_back(error_norm);
  }
};

namespace detail {

inline double error_norm(const Trajectory* truth, std::size_t k, const Vector& estimate) {
  if (truth == nullptr || k >= truth->true_states.size()) return std::numeric_limits<double>::quiet_NaN();
  return (truth->true_states[k] - estimate).norm();
}

}  // namespace detail

/// Runs predict/update over the measurement sequence, starting from
/// (x0_hat, p0) at k = 0 and correcting with y_k at every later step.
inline FilterRecord run_filter(const MlpModel& model, const Trajectory& traj, const FilterConfig& cfg) {
  if (traj.empty()) fail(ErrorKind::invalid_argument, "trajectory is empty");
  cfg.validate(model.input_dim());
  if (traj.meas_dim != cfg.measurement.meas_dim()) fail(ErrorKind::invalid_argument, "trajectory measurement dim mismatch");
  const Trajectory* truth = traj.true_states.size() == traj.size() ? &traj : nullptr;
  const auto n = static_cast<Eigen::Index>(model.input_dim());
  const auto m = static_cast<Eigen::Index>(cfg.measurement.meas_dim());
  const ControlInput u = no_input();

  FilterRecord record;
  FilterState state{cfg.x0_hat, symmetrize(cfg.p0), 0};
  record.push(state.x_hat, state.x_hat, Matrix::Zero(n, m), state.p_matrix, detail::error_norm(truth, 0, state.x_hat));

  for (std::size_t k = 1; k < traj.size(); ++k) {
    try {
      const Prediction pred = predict(model, state, u, cfg);
      Correction corr = update(pred.x_prior, pred.p_prior, traj.measurements[k], cfg, k);
      state = std::move(corr.state);
      record.push(pred.x_prior, state.x_hat, std::move(corr.gain), state.p_matrix,
                  detail::error_norm(truth, k, state.x_hat));
    } catch (const Error& e) {
      fail(e.kind(), "filter step " + std::to_string(k) + ": " + e.what());
    }
  }
  return record;
}

/// Iterates the network with no measurement feedback while propagating
/// P <- A P A^T + Q. Stops early and records the step if the state or the
/// covariance turns non-finite.
inline FilterRecord open_loop_rollout(const MlpModel& model, const StateVector& x0, std::size_t steps,
                                      const FilterConfig& cfg, const Trajectory* truth = nullptr) {
  if (steps < 1) fail(ErrorKind::invalid_argument, "steps must be >= 1");
  check_input(model, x0);
  const auto n = static_cast<Eigen::Index>(model.input_dim());
  if (cfg.q_matrix.rows() != n || cfg.p0.rows() != n) fail(ErrorKind::invalid_argument, "Q/P0 do not match model");
  const auto m = static_cast<Eigen::Index>(cfg.measurement.meas_dim());

  FilterRecord record;
  Vector x = x0;
  Matrix p = symmetrize(cfg.p0);
  record.push(x, x, Matrix::Zero(n, m), p, detail::error_norm(truth, 0, x));
  for (std::size_t k = 1; k < steps; ++k) {
    const Matrix a = jacobian_input(model, x);
    Vector next = forward(model, x);
    Matrix p_next = symmetrize(a * p * a.transpose() + cfg.q_matrix);
    if (!next.allFinite() || !p_next.allFinite()) {
      record.divergence_step = k;
      break;
    }
    x = std::move(next);
    p = std::move(p_next);
    record.push(x, x, Matrix::Zero(n, m), p, detail::error_norm(truth, k, x));
  }
  return record;
}

}  // namespace nf
