// nfilter: command-line runner for the neural filter case studies.
//
//   nfilter run <config>
//   nfilter train-only <config>
//   nfilter filter-only <config> <model-file>
//   nfilter compare <summary-a> <summary-b>
//
// Exit codes: 0 success, 2 configuration or input error, 3 stage failure.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "neural_filter/neural_filter.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr const char* kOutputRootEnv = "NF_OUTPUT_ROOT";

struct CommonFlags {
  std::optional<std::uint64_t> seed_override;
  std::string out_dir;
  bool full_paper_scale = false;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--seed-override", flags.seed_override, "Replace every seed (data, init, train, noise)");
  cmd->add_option("--out-dir", flags.out_dir, "Output directory (default: $NF_OUTPUT_ROOT/<output_dir or name>)");
  cmd->add_flag("--full-paper-scale", flags.full_paper_scale, "Use n_samples_full instead of the desk-scale count");
}

std::filesystem::path resolve_out_dir(const nf::ExperimentConfig& cfg, const CommonFlags& flags) {
  if (!flags.out_dir.empty()) return flags.out_dir;
  const std::filesystem::path leaf = cfg.output_dir.empty() ? cfg.name : cfg.output_dir;
  if (leaf.is_absolute()) return leaf;
  const char* root = std::getenv(kOutputRootEnv);
  return std::filesystem::path(root != nullptr && *root != '\0' ? root : "runs") / leaf;
}

nf::ExperimentConfig load(const std::string& path, const CommonFlags& flags) {
  nf::ExperimentConfig cfg = nf::load_config(path);
  if (flags.seed_override) nf::apply_seed_override(cfg, *flags.seed_override);
  return cfg;
}

void print_summary(const nf::RunSummary& s, const std::filesystem::path& out_dir) {
  std::cout << std::setprecision(6) << s.name << " (" << s.system << ", " << s.horizon_steps << " steps)\n"
            << "  filter final-quarter error    " << s.filter_final_quarter_error << "\n"
            << "  open-loop final-quarter error " << s.open_loop_final_quarter_error << "\n"
            << "  filter max tr P               " << s.filter_max_trace_p << "\n"
            << "  open-loop final tr P          " << s.open_loop_final_trace_p << "\n"
            << "  final train / val loss        " << s.final_train_loss << " / " << s.final_val_loss << "\n";
  if (s.divergence_step) std::cout << "  open loop diverged at step    " << *s.divergence_step << "\n";
  std::cout << "  artifacts in " << out_dir.string() << "\n";
}

int run_cmd(const std::string& config, const CommonFlags& flags) {
  const nf::ExperimentConfig cfg = load(config, flags);
  const auto out_dir = resolve_out_dir(cfg, flags);
  const auto result = nf::run_case_study(cfg, out_dir, {flags.full_paper_scale});
  print_summary(result.summary, out_dir);
  return 0;
}

int train_only_cmd(const std::string& config, const CommonFlags& flags) {
  const nf::ExperimentConfig cfg = load(config, flags);
  const auto out_dir = resolve_out_dir(cfg, flags);
  try {
    nf::experiment_detail::stage("validate", [&] {
      nf::experiment_detail::prepare_dir(out_dir);
      return 0;
    });
    const nf::TrainResult trained = nf::train_stage(cfg, {flags.full_paper_scale});
    nf::experiment_detail::stage("write", [&] {
      nf::write_training_artifacts(trained, out_dir);
      return 0;
    });
    std::cout << "trained " << cfg.name << ": " << trained.trace.iterations.size() << " iterations";
    if (!trained.trace.val_losses.empty()) std::cout << ", final val loss " << trained.trace.val_losses.back();
    std::cout << "\n  artifacts in " << out_dir.string() << "\n";
  } catch (const nf::StageError& e) {
    nf::experiment_detail::mark_failed(out_dir, e);
    throw;
  }
  return 0;
}

int filter_only_cmd(const std::string& config, const std::string& model_path, const CommonFlags& flags) {
  const nf::ExperimentConfig cfg = load(config, flags);
  const auto out_dir = resolve_out_dir(cfg, flags);
  try {
    nf::experiment_detail::stage("validate", [&] {
      nf::experiment_detail::prepare_dir(out_dir);
      return 0;
    });
    nf::MlpModel model = nf::experiment_detail::stage("load", [&] { return nf::load_model(model_path); });
    const nf::CaseStudyResult result = nf::estimate_stage(cfg, std::move(model));
    nf::experiment_detail::stage("write", [&] {
      nf::write_estimate_artifacts(result, out_dir);
      return 0;
    });
    print_summary(result.summary, out_dir);
  } catch (const nf::StageError& e) {
    nf::experiment_detail::mark_failed(out_dir, e);
    throw;
  }
  return 0;
}

int compare_cmd(const std::string& a_path, const std::string& b_path) {
  const nf::RunSummary a = nf::load_summary(a_path);
  const nf::RunSummary b = nf::load_summary(b_path);
  const nf::ComparisonReport report = nf::compare_runs(a, b);
  std::cout << "# " << a.name << " / " << b.name << "\n" << std::setprecision(17);
  for (const auto& [key, value] : report.ratios) std::cout << key << "," << value << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural filter case-study runner"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string config, model_path, summary_a, summary_b;

  auto* run = app.add_subcommand("run", "Generate data, train, simulate and filter");
  run->add_option("config", config, "Experiment config file")->required();
  add_common_flags(run, flags);

  auto* train_only = app.add_subcommand("train-only", "Generate data and train; write model and loss traces");
  train_only->add_option("config", config, "Experiment config file")->required();
  add_common_flags(train_only, flags);

  auto* filter_only = app.add_subcommand("filter-only", "Simulate and filter with an existing model file");
  filter_only->add_option("config", config, "Experiment config file")->required();
  filter_only->add_option("model", model_path, "Model file written by run or train-only")->required();
  add_common_flags(filter_only, flags);

  auto* compare = app.add_subcommand("compare", "Ratios of two run summaries (a / b)");
  compare->add_option("summary_a", summary_a, "summary.json of run a")->required();
  compare->add_option("summary_b", summary_b, "summary.json of run b")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return run_cmd(config, flags);
    if (*train_only) return train_only_cmd(config, flags);
    if (*filter_only) return filter_only_cmd(config, model_path, flags);
    if (*compare) return compare_cmd(summary_a, summary_b);
  } catch (const nf::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  } catch (const nf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
