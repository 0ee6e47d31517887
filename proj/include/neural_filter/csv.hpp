#pragma once

// CSV emission for trajectories, filter records and loss traces. Floats use
// 17 significant digits, lines end in '\n', and the header is always written.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "neural_filter/dynamics.hpp"
#include "neural_filter/error.hpp"
#include "neural_filter/filter.hpp"
#include "neural_filter/training.hpp"

namespace nf {

namespace csv_detail {

inline void append(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

inline void append_columns(std::string& out, const char* prefix, int count) {
  for (int i = 1; i <= count; ++i) {
    out += ',';
    out += prefix;
    out += std::to_string(i);
  }
}

inline void append_values(std::string& out, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out += ',';
    append(out, v[i]);
  }
}

}  // namespace csv_detail

/// k,t,x_true_1..n,y_1..m
inline std::string format_trajectory_csv(const Trajectory& traj) {
  std::string out = "k,t";
  csv_detail::append_columns(out, "x_true_", traj.state_dim);
  csv_detail::append_columns(out, "y_", traj.meas_dim);
  out += '\n';
  for (std::size_t k = 0; k < traj.size(); ++k) {
    out += std::to_string(k);
    out += ',';
    csv_detail::append(out, traj.times[k]);
    csv_detail::append_values(out, traj.true_states[k]);
    csv_detail::append_values(out, traj.measurements[k]);
    out += '\n';
  }
  return out;
}

/// k,t,x_true_1..n,y_1..m,xhat_prior_1..n,xhat_post_1..n,err_norm,trace_P
///
/// One row per record entry. A missing error norm is an empty field.
inline std::string format_estimate_csv(const Trajectory& traj, const FilterRecord& record) {
  if (record.size() > traj.size()) fail(ErrorKind::invalid_argument, "record is longer than its trajectory");
  std::string out = "k,t";
  csv_detail::append_columns(out, "x_true_", traj.state_dim);
  csv_detail::append_columns(out, "y_", traj.meas_dim);
  csv_detail::append_columns(out, "xhat_prior_", traj.state_dim);
  csv_detail::append_columns(out, "xhat_post_", traj.state_dim);
  out += ",err_norm,trace_P\n";
  for (std::size_t k = 0; k < record.size(); ++k) {
    out += std::to_string(k);
    out += ',';
    csv_detail::append(out, traj.times[k]);
    csv_detail::append_values(out, traj.true_states[k]);
    csv_detail::append_values(out, traj.measurements[k]);
    csv_detail::append_values(out, record.priors[k]);
    csv_detail::append_values(out, record.posteriors[k]);
    out += ',';
    if (!std::isnan(record.error_norms[k])) csv_detail::append(out, record.error_norms[k]);
    out += ',';
    csv_detail::append(out, record.trace_p[k]);
    out += '\n';
  }
  return out;
}

/// iteration,train_loss,val_loss with val_loss empty off the validation schedule.
inline std::string format_loss_csv(const LossTrace& trace) {
  std::string out = "iteration,train_loss,val_loss\n";
  std::size_t v = 0;
  for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
    out += std::to_string(trace.iterations[i]);
    out += ',';
    csv_detail::append(out, trace.train_losses[i]);
    out += ',';
    while (v < trace.val_iterations.size() && trace.val_iterations[v] < trace.iterations[i]) ++v;
    if (v < trace.val_iterations.size() && trace.val_iterations[v] == trace.iterations[i]) {
      csv_detail::append(out, trace.val_losses[v]);
    }
    out += '\n';
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  out.close();
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

inline void emit_csv(const Trajectory& traj, const std::filesystem::path& path) {
  write_text_file(path, format_trajectory_csv(traj));
}

inline void emit_csv(const Trajectory& traj, const FilterRecord& record, const std::filesystem::path& path) {
  write_text_file(path, format_estimate_csv(traj, record));
}

inline void emit_csv(const LossTrace& trace, const std::filesystem::path& path) {
  write_text_file(path, format_loss_csv(trace));
}

}  // namespace nf
