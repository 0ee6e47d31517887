// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.
//
//   acceptance [--work-dir DIR] [--only N ...]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "neural_filter/neural_filter.hpp"
#include "oracles.hpp"
#include "properties.hpp"

namespace {

namespace fs = std::filesystem;
using nf::Matrix;
using nf::Vector;

// Pinned tolerances.
constexpr double kJacobianRelTol = 1e-5;
constexpr double kJacobianFdStep = 1e-6;
constexpr double kKinkMargin = 1e-3;
constexpr double kKalmanTol = 1e-9;
constexpr double kEnergyDriftTol = 1e-6;
constexpr double kRk4Tol = 1e-7;
constexpr double kRk4Step = 1e-5;
constexpr double kFilterToOpenLoopMax = 1.0 / 3.0;
constexpr double kTraceMaxOverMedian = 2.0;
constexpr double kOpenLoopTraceGrowth = 10.0;
constexpr std::size_t kOpenLoopTraceReference = 20;
constexpr double kNn2OverNn1FilterMax = 2.0;
constexpr double kChaosFractionBelow = 0.95;
constexpr double kLorenzErrorBound = 10.0;
constexpr double kDoublePendulumErrorBound = 1.0;
constexpr int kInvariantCases = 100;

const fs::path kConfigDir = fs::path(NF_SOURCE_DIR) / "configs";

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Case-study runs are shared between criteria, so each preset runs once.
class Runs {
 public:
  explicit Runs(fs::path root) : root_(std::move(root)) {}

  const nf::CaseStudyResult& get(const std::string& preset, const std::string& tag = "a") {
    const std::string key = preset + "/" + tag;
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const auto cfg = nf::load_config(kConfigDir / (preset + ".cfg"));
    const auto started = std::chrono::steady_clock::now();
    auto result = nf::run_case_study(cfg, dir(preset, tag));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::printf("       (ran %s in %.1f s)\n", key.c_str(), secs);
    std::fflush(stdout);
    return cache_.emplace(key, std::move(result)).first->second;
  }

  fs::path dir(const std::string& preset, const std::string& tag) const { return root_ / preset / tag; }

 private:
  fs::path root_;
  std::map<std::string, nf::CaseStudyResult> cache_;
};

nf::MlpModel random_model(std::mt19937_64& rng, int in, const std::vector<int>& hidden) {
  std::vector<nf::LayerSpec> specs;
  for (int w : hidden) specs.push_back({w, nf::Activation::relu});
  specs.push_back({in, nf::Activation::linear});
  auto model = nf::init_model(in, specs, rng());
  auto layers = model.layers();
  std::normal_distribution<double> normal(0.0, 0.3);
  for (auto& layer : layers) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = normal(rng);
  }
  return nf::MlpModel(in, std::move(layers));
}

Verdict jacobian_correctness() {
  const std::vector<std::pair<int, std::vector<int>>> archs = {
      {2, {10}}, {2, {2}}, {2, {10, 10}}, {3, {10, 10, 10}}, {4, {10, 10, 10, 10}}};
  std::mt19937_64 rng(1);
  double worst = 0.0;
  int points = 0;
  for (const auto& [in, hidden] : archs) {
    for (int p = 0; p < 20; ++p) {
      const auto model = random_model(rng, in, hidden);
      int accepted = 0;
      while (accepted < 20) {
        const Vector x = oracle::random_vector(rng, in, -3, 3);
        if (properties::detail::hidden_margin(model, x) <= kKinkMargin) continue;
        const Matrix fd = oracle::finite_difference_jacobian([&](const Vector& v) { return nf::forward(model, v); }, x,
                                                             kJacobianFdStep);
        worst = std::max(worst, oracle::normwise_relative_error(nf::jacobian_input(model, x), fd));
        ++accepted;
      }
      points += accepted;
    }
  }
  return {worst < kJacobianRelTol,
          "max normwise relative error " + fmt(worst) + " over " + std::to_string(points) + " points (< " + fmt(kJacobianRelTol) + ")"};
}

Verdict kalman_equivalence() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int draw = 0; draw < 10; ++draw) {
    const int n = 2 + draw % 3;
    const int m = 1 + draw % n;
    // rotation-like stable dynamics
    Matrix a = oracle::random_spd(rng, n, 0.9, 0.99);
    Matrix skew = Matrix::Zero(n, n);
    skew(0, 1) = 0.1;
    skew(1, 0) = -0.1;
    a += skew;
    const Vector b = oracle::random_vector(rng, n, -0.05, 0.05);
    Matrix c(m, n);
    for (int r = 0; r < m; ++r) c.row(r) = oracle::random_vector(rng, n, -1, 1).transpose();
    const Matrix q = oracle::random_spd(rng, n, 1e-5, 1e-2);
    const Matrix p0 = oracle::random_spd(rng, n, 1e-3, 1.0);
    // R must be sigma^2 I for the measurement model; its scale is drawn
    std::uniform_real_distribution<double> sigma_dist(0.01, 1.0);
    const double sigma = sigma_dist(rng);
    const Matrix r = sigma * sigma * Matrix::Identity(m, m);

    std::normal_distribution<double> normal;
    Vector x = oracle::random_vector(rng, n, -1, 1);
    std::vector<Vector> ys;
    for (int k = 0; k < 1000; ++k) {
      if (k > 0) x = a * x + b;
      Vector noise(m);
      for (int i = 0; i < m; ++i) noise[i] = sigma * normal(rng);
      ys.push_back(c * x + noise);
    }
    nf::DenseLayer layer;
    layer.weights = a;
    layer.bias = b;
    layer.activation = nf::Activation::linear;
    const nf::MlpModel model(n, {layer});
    nf::Trajectory traj;
    traj.state_dim = n;
    traj.meas_dim = m;
    for (int k = 0; k < 1000; ++k) traj.times.push_back(k);
    traj.measurements = ys;
    const Vector x0_hat = Vector::Zero(n);
    const auto record = nf::run_filter(model, traj, nf::FilterConfig{q, nf::MeasurementModel(c, sigma), p0, x0_hat});
    const auto want = oracle::kalman_filter(a, b, c, q, r, x0_hat, p0, ys);
    for (std::size_t k = 0; k < want.size(); ++k) {
      worst = std::max(worst, (record.priors[k] - want[k].prior).cwiseAbs().maxCoeff());
      worst = std::max(worst, (record.posteriors[k] - want[k].posterior).cwiseAbs().maxCoeff());
      worst = std::max(worst, (record.gains[k] - want[k].gain).cwiseAbs().maxCoeff());
      worst = std::max(worst, (record.covariances[k] - want[k].covariance).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= kKalmanTol, "max elementwise deviation " + fmt(worst) + " over 10 draws x 1000 steps (<= " +
                                   fmt(kKalmanTol) + ")"};
}

Verdict integrator_fidelity() {
  const auto pendulum = nf::systems::pendulum();
  Vector x(2);
  x << std::numbers::pi / 3, 1;
  const double e0 = oracle::pendulum_energy(x);
  double drift = 0.0;
  for (int k = 0; k < 100; ++k) {
    x = nf::integrate_interval(pendulum, x, nf::no_input(), 0.1);
    drift = std::max(drift, std::abs(oracle::pendulum_energy(x) - e0) / std::abs(e0));
  }

  struct Case {
    const char* name;
    double ts;
    std::vector<double> x0;
    std::function<Vector(const Vector&)> field;
  };
  const std::vector<Case> cases = {
      {"pendulum", 0.1, {std::numbers::pi / 3, 1}, [](const Vector& v) { return oracle::pendulum_field(v); }},
      {"van_der_pol", 0.1, {2, 1}, [](const Vector& v) { return oracle::van_der_pol_field(v); }},
      {"lorenz", 0.01, {-6.13, 1.78, 1.67}, [](const Vector& v) { return oracle::lorenz_field(v); }},
      {"double_pendulum", 0.01, {-0.235, 0.267, -0.435, -0.301},
       [](const Vector& v) { return oracle::double_pendulum_field(v); }},
  };
  double worst = 0.0;
  for (const auto& c : cases) {
    const Vector x0 = Eigen::Map<const Vector>(c.x0.data(), static_cast<Eigen::Index>(c.x0.size()));
    const Vector got = nf::integrate_interval(nf::systems::by_name(c.name), x0, nf::no_input(), c.ts);
    const Vector want = oracle::rk4(c.field, x0, c.ts, kRk4Step);
    worst = std::max(worst, (got - want).cwiseAbs().maxCoeff());
  }
  return {drift < kEnergyDriftTol && worst < kRk4Tol, "pendulum energy drift " + fmt(drift) + " (< " +
                                                          fmt(kEnergyDriftTol) + "), max RK4 deviation " + fmt(worst) +
                                                          " (< " + fmt(kRk4Tol) + ")"};
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

Verdict pendulum_headline(Runs& runs) {
  const auto& r = runs.get("pendulum_nn1");
  const auto& s = r.summary;
  const double ratio = s.filter_final_quarter_error / s.open_loop_final_quarter_error;

  const std::size_t n = r.filter.trace_p.size();
  const std::vector<double> window(r.filter.trace_p.begin() + static_cast<std::ptrdiff_t>(n / 2), r.filter.trace_p.end());
  const double spread = *std::max_element(window.begin(), window.end()) / median(window);

  const auto& ol = r.open_loop.trace_p;
  const double growth = ol.size() > kOpenLoopTraceReference ? ol.back() / ol[kOpenLoopTraceReference] : 0.0;
  const bool complete = r.open_loop.size() == s.horizon_steps;

  return {ratio <= kFilterToOpenLoopMax && spread <= kTraceMaxOverMedian && growth > kOpenLoopTraceGrowth && complete,
          "filter/open-loop error " + fmt(ratio) + " (<= " + fmt(kFilterToOpenLoopMax) + "), final-half max/median tr P " +
              fmt(spread) + " (<= " + fmt(kTraceMaxOverMedian) + "), open-loop tr P final/k20 " + fmt(growth) + " (> " +
              fmt(kOpenLoopTraceGrowth) + ")"};
}

Verdict nn2_robustness(Runs& runs) {
  const auto& nn1 = runs.get("pendulum_nn1").summary;
  const auto& nn2 = runs.get("pendulum_nn2").summary;
  const auto report = nf::compare_runs(nn2, nn1);
  const double filter_ratio = report.at("filter_error_ratio");
  const double open_ratio = report.at("open_loop_error_ratio");
  return {filter_ratio <= kNn2OverNn1FilterMax && open_ratio > 1.0,
          "NN2/NN1 filter error " + fmt(filter_ratio) + " (<= " + fmt(kNn2OverNn1FilterMax) + "), NN2/NN1 open-loop error " +
              fmt(open_ratio) + " (> 1)"};
}

struct ChaosCheck {
  bool pass;
  std::string detail;
};

ChaosCheck chaos_case(Runs& runs, const std::string& preset, double bound) {
  const auto& r = runs.get(preset);
  const std::size_t horizon = r.summary.horizon_steps;
  std::size_t below = 0;
  for (double e : r.filter.error_norms) below += e < bound ? 1 : 0;
  const double fraction = static_cast<double>(below) / static_cast<double>(horizon);

  // a rollout that stopped early diverged at its divergence step
  std::size_t first_exceed = horizon;
  for (std::size_t k = 0; k < r.open_loop.size(); ++k) {
    if (r.open_loop.error_norms[k] > bound) {
      first_exceed = k;
      break;
    }
  }
  if (first_exceed == horizon && r.open_loop.divergence_step) first_exceed = *r.open_loop.divergence_step;
  const bool pass = r.filter.size() == horizon && fraction >= kChaosFractionBelow && first_exceed < horizon / 2;
  return {pass, preset + ": " + fmt(100 * fraction) + "% of steps below " + fmt(bound) + ", open loop exceeds at step " +
                    std::to_string(first_exceed) + " (< " + std::to_string(horizon / 2) + ")"};
}

Verdict chaotic_runs(Runs& runs) {
  const auto lorenz = chaos_case(runs, "lorenz", kLorenzErrorBound);
  const auto dp = chaos_case(runs, "double_pendulum", kDoublePendulumErrorBound);
  return {lorenz.pass && dp.pass, lorenz.detail + "; " + dp.detail};
}

Verdict determinism(Runs& runs) {
  const std::vector<std::string> presets = {"pendulum_nn1", "van_der_pol"};
  const std::vector<const char*> files = {nf::artifacts::kLoss, nf::artifacts::kLossSmoothed,
                                          nf::artifacts::kFilterTrajectory, nf::artifacts::kOpenLoopTrajectory,
                                          nf::artifacts::kModel};
  std::vector<std::string> differing;
  for (const auto& preset : presets) {
    runs.get(preset, "a");
    runs.get(preset, "b");
    for (const char* f : files) {
      const std::string a = slurp(runs.dir(preset, "a") / f);
      const std::string b = slurp(runs.dir(preset, "b") / f);
      if (a.empty() || a != b) differing.push_back(preset + "/" + f);
    }
  }
  std::string detail = std::to_string(presets.size() * files.size()) + " artifacts compared across 2 presets run twice";
  if (!differing.empty()) detail += ", differing: " + differing.front();
  return {differing.empty(), detail};
}

Verdict invariant_suites() {
  const auto started = std::chrono::steady_clock::now();
  int failed = 0;
  std::string first;
  std::size_t index = 0;
  for (const auto& prop : properties::all()) {
    std::mt19937_64 rng(0xacce + index++);
    const auto outcome = prop.run(rng, kInvariantCases);
    if (!outcome.passed() || outcome.cases < kInvariantCases) {
      if (failed++ == 0) first = prop.name + " (" + outcome.first_failure + ")";
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::string detail = std::to_string(properties::all().size()) + " properties x " + std::to_string(kInvariantCases) +
                       " cases in " + fmt(secs) + " s";
  if (failed) detail += ", " + std::to_string(failed) + " failing, first: " + first;
  return {failed == 0 && secs <= 60.0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the neural filter"};
  std::string work_dir = (fs::temp_directory_path() / "nf_acceptance").string();
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "Directory for case-study artifacts");
  app.add_option("--only", only, "Run only these criteria (1-8)")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  Runs runs{fs::path(work_dir)};
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"jacobian correctness", jacobian_correctness},
      {"kalman oracle equivalence", kalman_equivalence},
      {"integrator fidelity", integrator_fidelity},
      {"pendulum headline", [&] { return pendulum_headline(runs); }},
      {"nn2 robustness", [&] { return nn2_robustness(runs); }},
      {"chaotic systems", [&] { return chaotic_runs(runs); }},
      {"determinism", [&] { return determinism(runs); }},
      {"invariant suites", invariant_suites},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    const auto started = std::chrono::steady_clock::now();
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::printf("%s %d %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str(), secs);
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
