#pragma once

// End-to-end case-study runner: generate -> split -> train -> simulate truth
// -> open-loop rollout -> filter, with deterministic file artifacts.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "neural_filter/config.hpp"
#include "neural_filter/csv.hpp"
#include "neural_filter/dynamics.hpp"
#include "neural_filter/error.hpp"
#include "neural_filter/filter.hpp"
#include "neural_filter/mlp.hpp"
#include "neural_filter/training.hpp"

namespace nf {

/// File names inside a run's output directory.
namespace artifacts {
inline constexpr const char* kModel = "model.nfm";
inline constexpr const char* kLoss = "loss.csv";
inline constexpr const char* kLossSmoothed = "loss_smoothed.csv";
inline constexpr const char* kFilterTrajectory = "trajectory_filter.csv";
inline constexpr const char* kOpenLoopTrajectory = "trajectory_open_loop.csv";
inline constexpr const char* kSummary = "summary.json";
inline constexpr const char* kFailed = ".failed";
}  // namespace artifacts

/// Failure of one pipeline stage; keeps the kind of the underlying error.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.kind(), "stage '" + stage + "' failed: " + cause.what()), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct RunSummary {
  std::string name;
  std::string system;
  std::size_t horizon_steps = 0;
  double ts = 0.0;
  double filter_final_quarter_error = 0.0;
  double open_loop_final_quarter_error = 0.0;
  double filter_max_trace_p = 0.0;
  double open_loop_final_trace_p = 0.0;
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  double final_val_loss = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  std::optional<std::size_t> divergence_step;
};

inline nlohmann::ordered_json to_json(const RunSummary& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["system"] = s.system;
  j["horizon_steps"] = s.horizon_steps;
  j["ts"] = s.ts;
  j["filter_final_quarter_error"] = s.filter_final_quarter_error;
  j["open_loop_final_quarter_error"] = s.open_loop_final_quarter_error;
  j["filter_max_trace_p"] = s.filter_max_trace_p;
  j["open_loop_final_trace_p"] = s.open_loop_final_trace_p;
  j["final_train_loss"] = s.final_train_loss;
  j["final_val_loss"] = s.final_val_loss;
  j["wall_seconds"] = s.wall_seconds;
  j["divergence_step"] = s.divergence_step ? nlohmann::ordered_json(*s.divergence_step) : nlohmann::ordered_json(nullptr);
  return j;
}

inline RunSummary summary_from_json(const nlohmann::json& j) {
  // non-finite values are written as null
  auto number = [&](const char* key) {
    const auto& v = j.at(key);
    return v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
  };
  RunSummary s;
  try {
    s.name = j.at("name").get<std::string>();
    s.system = j.at("system").get<std::string>();
    s.horizon_steps = j.at("horizon_steps").get<std::size_t>();
    s.ts = j.at("ts").get<double>();
    s.filter_final_quarter_error = number("filter_final_quarter_error");
    s.open_loop_final_quarter_error = number("open_loop_final_quarter_error");
    s.filter_max_trace_p = number("filter_max_trace_p");
    s.open_loop_final_trace_p = number("open_loop_final_trace_p");
    s.final_train_loss = number("final_train_loss");
    s.final_val_loss = number("final_val_loss");
    s.wall_seconds = number("wall_seconds");
    if (!j.at("divergence_step").is_null()) s.divergence_step = j.at("divergence_step").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("malformed summary: ") + e.what());
  }
  return s;
}

inline void save_summary(const RunSummary& s, const std::filesystem::path& path) {
  write_text_file(path, to_json(s).dump(2) + "\n");
}

inline RunSummary load_summary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read summary " + path.string());
  try {
    return summary_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::invalid_argument, path.string() + ": " + e.what());
  }
}

/// Mean error over the last quarter of a horizon of `horizon` rows. Rows the
/// record never reached count as infinite error.
inline double final_quarter_mean_error(const FilterRecord& record, std::size_t horizon) {
  if (horizon == 0) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t start = std::min((3 * horizon) / 4, horizon - 1);
  if (record.size() < horizon) return std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (std::size_t k = start; k < horizon; ++k) sum += record.error_norms[k];
  return sum / static_cast<double>(horizon - start);
}

struct CaseStudyResult {
  RunSummary summary;
  MlpModel model;
  LossTrace trace;
  Trajectory truth;
  FilterRecord filter;
  FilterRecord open_loop;
};

struct RunOptions {
  bool full_paper_scale = false;
};

/// Replaces every seed. Each stage gets a distinct stream derived from `seed`.
inline void apply_seed_override(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.seeds = Seeds{seed, seed + 1, seed + 2, seed + 3};
  cfg.train.seed = cfg.seeds.train;
}

namespace experiment_detail {

template <class Fn>
auto stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  }
}

inline void mark_failed(const std::filesystem::path& out_dir, const StageError& e) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::ofstream marker(out_dir / artifacts::kFailed, std::ios::binary | std::ios::trunc);
  marker << "stage: " << e.stage() << "\nerror: " << e.what() << "\n";
}

inline void prepare_dir(const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + out_dir.string() + ": " + ec.message());
  std::filesystem::remove(out_dir / artifacts::kFailed, ec);
}

}  // namespace experiment_detail

/// Data generation and training. Returns the trained model and raw trace.
inline TrainResult train_stage(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
  using experiment_detail::stage;
  const OdeSystem system = stage("setup", [&] { return cfg.make_system(); });
  const std::size_t n = opts.full_paper_scale && cfg.n_samples_full ? *cfg.n_samples_full : cfg.n_samples;
  const Dataset data =
      stage("generate", [&] { return generate_dataset(system, cfg.box, n, cfg.ts, cfg.integrator, cfg.seeds.data); });
  auto split = stage("split", [&] { return split_dataset(data, cfg.train.split_fraction, cfg.seeds.data); });
  MlpModel model = stage("init", [&] { return init_model(system.dim(), cfg.layers(), cfg.seeds.init, cfg.use_bias); });
  return stage("train", [&] { return train(std::move(model), split.first, split.second, cfg.train); });
}

/// Truth simulation, open-loop rollout and filtering with a given model.
inline CaseStudyResult estimate_stage(const ExperimentConfig& cfg, MlpModel model) {
  using experiment_detail::stage;
  const OdeSystem system = stage("setup", [&] { return cfg.make_system(); });
  if (model.input_dim() != system.dim() || model.output_dim() != system.dim()) {
    throw StageError("setup", Error(ErrorKind::shape_mismatch, "model dimensions do not match " + cfg.system));
  }
  CaseStudyResult out;
  out.model = std::move(model);
  out.truth = stage("simulate", [&] {
    return simulate_truth(system, cfg.measurement, cfg.x0, cfg.horizon_steps, cfg.ts, cfg.integrator, cfg.seeds.noise);
  });
  const FilterConfig fcfg = cfg.filter_config();
  out.open_loop = stage("open_loop", [&] { return open_loop_rollout(out.model, cfg.x0, cfg.horizon_steps, fcfg, &out.truth); });
  out.filter = stage("filter", [&] { return run_filter(out.model, out.truth, fcfg); });

  RunSummary& s = out.summary;
  s.name = cfg.name;
  s.system = cfg.system;
  s.horizon_steps = cfg.horizon_steps;
  s.ts = cfg.ts;
  s.filter_final_quarter_error = final_quarter_mean_error(out.filter, cfg.horizon_steps);
  s.open_loop_final_quarter_error = final_quarter_mean_error(out.open_loop, cfg.horizon_steps);
  s.filter_max_trace_p = *std::max_element(out.filter.trace_p.begin(), out.filter.trace_p.end());
  s.open_loop_final_trace_p = out.open_loop.trace_p.back();
  s.divergence_step = out.open_loop.divergence_step;
  return out;
}

inline void write_training_artifacts(const TrainResult& trained, const std::filesystem::path& out_dir) {
  save_model(trained.model, out_dir / artifacts::kModel);
  emit_csv(trained.trace, out_dir / artifacts::kLoss);
  emit_csv(smooth(trained.trace), out_dir / artifacts::kLossSmoothed);
}

inline void write_estimate_artifacts(const CaseStudyResult& r, const std::filesystem::path& out_dir) {
  emit_csv(r.truth, r.filter, out_dir / artifacts::kFilterTrajectory);
  emit_csv(r.truth, r.open_loop, out_dir / artifacts::kOpenLoopTrajectory);
  save_summary(r.summary, out_dir / artifacts::kSummary);
}

/// Full pipeline; writes every artifact into out_dir. On failure a `.failed`
/// marker naming the stage is left next to whatever was already written.
inline CaseStudyResult run_case_study(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                      const RunOptions& opts = {}) {
  const auto started = std::chrono::steady_clock::now();
  try {
    experiment_detail::stage("validate", [&] {
      cfg.validate();
      experiment_detail::prepare_dir(out_dir);
      return 0;
    });
    TrainResult trained = train_stage(cfg, opts);
    experiment_detail::stage("write", [&] {
      write_training_artifacts(trained, out_dir);
      return 0;
    });
    CaseStudyResult result = estimate_stage(cfg, trained.model);
    result.trace = std::move(trained.trace);
    if (!result.trace.empty()) result.summary.final_train_loss = result.trace.train_losses.back();
    if (!result.trace.val_losses.empty()) result.summary.final_val_loss = result.trace.val_losses.back();
    result.summary.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    experiment_detail::stage("write", [&] {
      write_estimate_artifacts(result, out_dir);
      return 0;
    });
    return result;
  } catch (const StageError& e) {
    experiment_detail::mark_failed(out_dir, e);
    throw;
  }
}

/// Ordered ratios a/b of the headline metrics.
struct ComparisonReport {
  std::vector<std::pair<std::string, double>> ratios;

  double at(const std::string& key) const {
    for (const auto& [k, v] : ratios) {
      if (k == key) return v;
    }
    fail(ErrorKind::invalid_argument, "no ratio named " + key);
  }
};

inline ComparisonReport compare_runs(const RunSummary& a, const RunSummary& b) {
  if (a.system != b.system) fail(ErrorKind::invalid_comparison, "cannot compare " + a.system + " with " + b.system);
  if (a.horizon_steps != b.horizon_steps || a.ts != b.ts) {
    fail(ErrorKind::invalid_comparison, "runs cover different horizons");
  }
  auto ratio = [](double x, double y) {
    if (x == y || (std::isnan(x) && std::isnan(y))) return 1.0;
    return x / y;
  };
  ComparisonReport report;
  report.ratios = {
      {"filter_error_ratio", ratio(a.filter_final_quarter_error, b.filter_final_quarter_error)},
      {"open_loop_error_ratio", ratio(a.open_loop_final_quarter_error, b.open_loop_final_quarter_error)},
      {"filter_max_trace_ratio", ratio(a.filter_max_trace_p, b.filter_max_trace_p)},
      {"open_loop_final_trace_ratio", ratio(a.open_loop_final_trace_p, b.open_loop_final_trace_p)},
      {"final_val_loss_ratio", ratio(a.final_val_loss, b.final_val_loss)},
  };
  return report;
}

}  // namespace nf
