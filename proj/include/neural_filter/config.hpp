#pragma once

// Experiment configuration and its text format.
//
// Grammar (one item per line):
//
//   # comment            ignored, as are blank lines
//   [section]            one of system, data, nn, train, measurement, filter, run
//   key = value          value is a number, a word, a list, or a matrix
//
// Numbers accept the forms 1.5, -2e-3, 8/3, pi, -pi/2, 2*pi/3. Lists separate
// entries with commas. Matrices separate rows with ';' and entries with
// commas or spaces. Unknown sections and keys are errors.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "neural_filter/dynamics.hpp"
#include "neural_filter/error.hpp"
#include "neural_filter/filter.hpp"
#include "neural_filter/mlp.hpp"
#include "neural_filter/training.hpp"

namespace nf {

struct Seeds {
  std::uint64_t data = 1;
  std::uint64_t init = 2;
  std::uint64_t train = 3;
  std::uint64_t noise = 4;

  friend bool operator==(const Seeds&, const Seeds&) = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string system = "pendulum";
  ParamMap params;
  IntegratorConfig integrator;

  double ts = 0.1;
  std::size_t horizon_steps = 200;
  SampleBox box;
  std::size_t n_samples = 1000;
  std::optional<std::size_t> n_samples_full;

  std::vector<int> hidden_widths{10};
  bool use_bias = true;

  TrainConfig train;
  MeasurementModel measurement;
  /// Q and P0 as multiples of the identity, or explicit diagonals.
  Vector q_diag;
  Vector p0_diag;
  Vector x0_hat;

  Vector x0;
  Seeds seeds;
  std::string output_dir;

  OdeSystem make_system() const { return systems::by_name(system, params); }

  /// Hidden ReLU layers followed by a linear output of the state dimension.
  std::vector<LayerSpec> layers() const {
    std::vector<LayerSpec> specs;
    for (int w : hidden_widths) specs.push_back({w, Activation::relu});
    specs.push_back({make_system().dim(), Activation::linear});
    return specs;
  }

  FilterConfig filter_config() const {
    return FilterConfig{q_diag.asDiagonal().toDenseMatrix(), measurement, p0_diag.asDiagonal().toDenseMatrix(), x0_hat};
  }

  void validate() const {
    const OdeSystem sys = make_system();
    const int dim = sys.dim();
    integrator.validate();
    if (!(ts > 0.0) || !std::isfinite(ts)) fail(ErrorKind::config, "[data] ts must be > 0");
    if (horizon_steps < 1) fail(ErrorKind::config, "[run] horizon_steps must be >= 1");
    if (n_samples < 1) fail(ErrorKind::config, "[data] n_samples must be >= 1");
    if (n_samples_full && *n_samples_full < 1) fail(ErrorKind::config, "[data] n_samples_full must be >= 1");
    try {
      box.validate(dim);
    } catch (const Error& e) {
      fail(ErrorKind::config, std::string("[data] ") + e.what());
    }
    for (int w : hidden_widths) {
      if (w < 1) fail(ErrorKind::config, "[nn] hidden widths must be >= 1");
    }
    try {
      train.validate();
      filter_config().validate(dim);
    } catch (const Error& e) {
      fail(ErrorKind::config, e.what());
    }
    if (x0.size() != dim || !x0.allFinite()) fail(ErrorKind::config, "[run] x0 must have " + std::to_string(dim) + " entries");
  }
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

inline double parse_plain(const std::string& token, const std::string& where) {
  if (token.empty()) fail(ErrorKind::config, where + ": empty number");
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end != token.c_str() + token.size() || !std::isfinite(v)) fail(ErrorKind::config, where + ": bad number '" + token + "'");
  return v;
}

inline double parse_number(std::string token, const std::string& where) {
  token = trim(token);
  const auto pi_at = token.find("pi");
  if (pi_at == std::string::npos) {
    const auto slash = token.find('/');
    if (slash == std::string::npos) return parse_plain(token, where);
    const double divisor = parse_plain(trim(token.substr(slash + 1)), where);
    if (divisor == 0.0) fail(ErrorKind::config, where + ": division by zero");
    return parse_plain(trim(token.substr(0, slash)), where) / divisor;
  }

  double sign = 1.0;
  std::string head = token.substr(0, pi_at);
  if (!head.empty() && (head[0] == '-' || head[0] == '+')) {
    sign = head[0] == '-' ? -1.0 : 1.0;
    head.erase(0, 1);
  }
  double coefficient = 1.0;
  if (!head.empty()) {
    if (head.back() != '*') fail(ErrorKind::config, where + ": bad number '" + token + "'");
    head.pop_back();
    coefficient = parse_plain(head, where);
  }
  double divisor = 1.0;
  const std::string tail = token.substr(pi_at + 2);
  if (!tail.empty()) {
    if (tail[0] != '/') fail(ErrorKind::config, where + ": bad number '" + token + "'");
    divisor = parse_plain(tail.substr(1), where);
    if (divisor == 0.0) fail(ErrorKind::config, where + ": division by zero");
  }
  return sign * coefficient * std::numbers::pi / divisor;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  parts.push_back(trim(cur));
  return parts;
}

inline Vector parse_list(const std::string& value, const std::string& where) {
  if (trim(value).empty()) return Vector(0);
  const auto parts = split(value, ',');
  Vector v(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) v[static_cast<Eigen::Index>(i)] = parse_number(parts[i], where);
  return v;
}

inline Matrix parse_matrix(const std::string& value, const std::string& where) {
  std::vector<std::vector<double>> rows;
  for (const auto& row_text : split(value, ';')) {
    std::string normalized = row_text;
    for (char& ch : normalized) {
      if (ch == ',') ch = ' ';
    }
    std::istringstream in(normalized);
    std::vector<double> row;
    for (std::string tok; in >> tok;) row.push_back(parse_number(tok, where));
    if (row.empty()) fail(ErrorKind::config, where + ": empty matrix row");
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) fail(ErrorKind::config, where + ": ragged matrix");
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

inline std::uint64_t parse_count(const std::string& value, const std::string& where) {
  const std::string t = trim(value);
  if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) {
    fail(ErrorKind::config, where + ": expected a non-negative integer, got '" + t + "'");
  }
  try {
    return std::stoull(t);
  } catch (const std::exception&) {
    fail(ErrorKind::config, where + ": integer out of range");
  }
}

inline bool parse_bool(const std::string& value, const std::string& where) {
  const std::string t = trim(value);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  fail(ErrorKind::config, where + ": expected true or false");
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_list(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_double(v[i]);
  return out;
}

/// Scalar -> constant diagonal of length dim; list -> explicit diagonal.
inline Vector expand_diag(const Vector& given, int dim, const std::string& where) {
  if (given.size() == 1) return Vector::Constant(dim, given[0]);
  if (given.size() != dim) fail(ErrorKind::config, where + ": expected 1 or " + std::to_string(dim) + " values");
  return given;
}

}  // namespace config_detail

/// Parses config text. Section/key order is free; defaults fill missing keys.
inline ExperimentConfig parse_config(const std::string& text) {
  using namespace config_detail;
  static const std::map<std::string, std::set<std::string>> kKeys = {
      {"system", {"name", "rel_tol", "abs_tol", "max_steps", "initial_step"}},
      {"data", {"ts", "n_samples", "n_samples_full", "box_lower", "box_upper", "seed"}},
      {"nn", {"hidden", "bias", "seed"}},
      {"train", {"batch_size", "split_fraction", "learning_rate", "beta1", "beta2", "eps", "epochs",
                 "validation_every", "seed"}},
      {"measurement", {"c", "sigma_v", "seed"}},
      {"filter", {"q", "p0", "x0_hat"}},
      {"run", {"name", "horizon_steps", "x0", "output_dir"}},
  };

  std::map<std::string, std::map<std::string, std::string>> entries;
  std::map<std::string, int> key_lines;
  std::string section;
  std::istringstream in(text);
  int line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') fail(ErrorKind::config, where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!kKeys.contains(section)) fail(ErrorKind::config, where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::config, where + ": expected key = value");
    if (section.empty()) fail(ErrorKind::config, where + ": key outside of any section");
    const std::string key = trim(line.substr(0, eq));
    if (entries[section].contains(key)) fail(ErrorKind::config, where + ": duplicate key '" + key + "'");
    entries[section][key] = trim(line.substr(eq + 1));
    key_lines[section + "." + key] = line_no;
  }

  ExperimentConfig cfg;
  auto has = [&](const std::string& s, const std::string& k) { return entries[s].contains(k); };
  auto get = [&](const std::string& s, const std::string& k) { return entries[s].at(k); };
  auto where = [&](const std::string& s, const std::string& k) {
    return "[" + s + "] " + k + " (line " + std::to_string(key_lines[s + "." + k]) + ")";
  };

  // [system]: besides the integrator keys, every key is a system parameter
  if (!has("system", "name")) fail(ErrorKind::config, "[system] name is required");
  cfg.system = get("system", "name");
  std::vector<std::string> allowed_params;
  try {
    allowed_params = systems::parameter_names(cfg.system);
  } catch (const Error&) {
    fail(ErrorKind::config, "[system] unknown system '" + cfg.system + "'");
  }
  for (const auto& [key, value] : entries["system"]) {
    if (kKeys.at("system").contains(key)) continue;
    if (std::find(allowed_params.begin(), allowed_params.end(), key) == allowed_params.end()) {
      fail(ErrorKind::config, where("system", key) + ": '" + cfg.system + "' has no parameter '" + key + "'");
    }
    cfg.params[key] = parse_number(value, where("system", key));
  }
  for (const auto& [s, keys] : entries) {
    if (s == "system") continue;
    for (const auto& [key, value] : keys) {
      if (!kKeys.at(s).contains(key)) fail(ErrorKind::config, where(s, key) + ": unknown key");
    }
  }
  if (has("system", "rel_tol")) cfg.integrator.rel_tol = parse_number(get("system", "rel_tol"), where("system", "rel_tol"));
  if (has("system", "abs_tol")) cfg.integrator.abs_tol = parse_number(get("system", "abs_tol"), where("system", "abs_tol"));
  if (has("system", "max_steps")) cfg.integrator.max_steps = parse_count(get("system", "max_steps"), where("system", "max_steps"));
  if (has("system", "initial_step")) {
    cfg.integrator.initial_step = parse_number(get("system", "initial_step"), where("system", "initial_step"));
  }

  OdeSystem sys = [&] {
    try {
      return cfg.make_system();
    } catch (const Error& e) {
      fail(ErrorKind::config, std::string("[system] ") + e.what());
    }
  }();
  const int dim = sys.dim();

  if (has("data", "ts")) cfg.ts = parse_number(get("data", "ts"), where("data", "ts"));
  if (has("data", "n_samples")) cfg.n_samples = parse_count(get("data", "n_samples"), where("data", "n_samples"));
  if (has("data", "n_samples_full")) {
    cfg.n_samples_full = parse_count(get("data", "n_samples_full"), where("data", "n_samples_full"));
  }
  if (!has("data", "box_lower") || !has("data", "box_upper")) fail(ErrorKind::config, "[data] box_lower and box_upper are required");
  cfg.box.lower = parse_list(get("data", "box_lower"), where("data", "box_lower"));
  cfg.box.upper = parse_list(get("data", "box_upper"), where("data", "box_upper"));
  if (has("data", "seed")) cfg.seeds.data = parse_count(get("data", "seed"), where("data", "seed"));

  if (has("nn", "hidden")) {
    cfg.hidden_widths.clear();
    const Vector widths = parse_list(get("nn", "hidden"), where("nn", "hidden"));
    for (Eigen::Index i = 0; i < widths.size(); ++i) {
      if (widths[i] != std::floor(widths[i]) || widths[i] < 1 || widths[i] > 1e6) {
        fail(ErrorKind::config, where("nn", "hidden") + ": widths must be positive integers");
      }
      cfg.hidden_widths.push_back(static_cast<int>(widths[i]));
    }
  }
  if (has("nn", "bias")) cfg.use_bias = parse_bool(get("nn", "bias"), where("nn", "bias"));
  if (has("nn", "seed")) cfg.seeds.init = parse_count(get("nn", "seed"), where("nn", "seed"));

  TrainConfig& t = cfg.train;
  if (has("train", "batch_size")) t.batch_size = parse_count(get("train", "batch_size"), where("train", "batch_size"));
  if (has("train", "split_fraction")) t.split_fraction = parse_number(get("train", "split_fraction"), where("train", "split_fraction"));
  if (has("train", "learning_rate")) t.learning_rate = parse_number(get("train", "learning_rate"), where("train", "learning_rate"));
  if (has("train", "beta1")) t.adam_beta1 = parse_number(get("train", "beta1"), where("train", "beta1"));
  if (has("train", "beta2")) t.adam_beta2 = parse_number(get("train", "beta2"), where("train", "beta2"));
  if (has("train", "eps")) t.adam_eps = parse_number(get("train", "eps"), where("train", "eps"));
  if (has("train", "epochs")) t.epochs = parse_count(get("train", "epochs"), where("train", "epochs"));
  if (has("train", "validation_every")) {
    t.validation_every = parse_count(get("train", "validation_every"), where("train", "validation_every"));
  }
  if (has("train", "seed")) cfg.seeds.train = parse_count(get("train", "seed"), where("train", "seed"));
  t.seed = cfg.seeds.train;

  if (!has("measurement", "c")) fail(ErrorKind::config, "[measurement] c is required");
  const Matrix c = parse_matrix(get("measurement", "c"), where("measurement", "c"));
  if (c.cols() != dim) fail(ErrorKind::config, where("measurement", "c") + ": needs " + std::to_string(dim) + " columns");
  const double sigma_v = has("measurement", "sigma_v")
                             ? parse_number(get("measurement", "sigma_v"), where("measurement", "sigma_v"))
                             : 0.0;
  try {
    cfg.measurement = MeasurementModel(c, sigma_v);
  } catch (const Error& e) {
    fail(ErrorKind::config, std::string("[measurement] ") + e.what());
  }
  if (has("measurement", "seed")) cfg.seeds.noise = parse_count(get("measurement", "seed"), where("measurement", "seed"));

  cfg.q_diag = Vector::Constant(dim, 1e-4);
  cfg.p0_diag = Vector::Constant(dim, 1e-4);
  cfg.x0_hat = Vector::Zero(dim);
  if (has("filter", "q")) cfg.q_diag = expand_diag(parse_list(get("filter", "q"), where("filter", "q")), dim, where("filter", "q"));
  if (has("filter", "p0")) cfg.p0_diag = expand_diag(parse_list(get("filter", "p0"), where("filter", "p0")), dim, where("filter", "p0"));
  if (has("filter", "x0_hat")) cfg.x0_hat = parse_list(get("filter", "x0_hat"), where("filter", "x0_hat"));

  if (has("run", "name")) cfg.name = get("run", "name");
  if (has("run", "horizon_steps")) cfg.horizon_steps = parse_count(get("run", "horizon_steps"), where("run", "horizon_steps"));
  if (!has("run", "x0")) fail(ErrorKind::config, "[run] x0 is required");
  cfg.x0 = parse_list(get("run", "x0"), where("run", "x0"));
  if (has("run", "output_dir")) cfg.output_dir = get("run", "output_dir");

  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

/// Renders a config in the text format; parse_config(format_config(c)) == c.
inline std::string format_config(const ExperimentConfig& cfg) {
  using config_detail::format_double;
  using config_detail::format_list;
  std::ostringstream out;
  out << "[system]\nname = " << cfg.system << "\n";
  for (const auto& [key, value] : cfg.params) out << key << " = " << format_double(value) << "\n";
  out << "rel_tol = " << format_double(cfg.integrator.rel_tol) << "\n"
      << "abs_tol = " << format_double(cfg.integrator.abs_tol) << "\n"
      << "max_steps = " << cfg.integrator.max_steps << "\n"
      << "initial_step = " << format_double(cfg.integrator.initial_step) << "\n\n";

  out << "[data]\nts = " << format_double(cfg.ts) << "\nn_samples = " << cfg.n_samples << "\n";
  if (cfg.n_samples_full) out << "n_samples_full = " << *cfg.n_samples_full << "\n";
  out << "box_lower = " << format_list(cfg.box.lower) << "\nbox_upper = " << format_list(cfg.box.upper) << "\n"
      << "seed = " << cfg.seeds.data << "\n\n";

  out << "[nn]\nhidden = ";
  for (std::size_t i = 0; i < cfg.hidden_widths.size(); ++i) out << (i ? ", " : "") << cfg.hidden_widths[i];
  out << "\nbias = " << (cfg.use_bias ? "true" : "false") << "\nseed = " << cfg.seeds.init << "\n\n";

  const TrainConfig& t = cfg.train;
  out << "[train]\nbatch_size = " << t.batch_size << "\nsplit_fraction = " << format_double(t.split_fraction)
      << "\nlearning_rate = " << format_double(t.learning_rate) << "\nbeta1 = " << format_double(t.adam_beta1)
      << "\nbeta2 = " << format_double(t.adam_beta2) << "\neps = " << format_double(t.adam_eps)
      << "\nepochs = " << t.epochs << "\nvalidation_every = " << t.validation_every << "\nseed = " << cfg.seeds.train
      << "\n\n";

  out << "[measurement]\nc = ";
  const Matrix& c = cfg.measurement.c_matrix;
  for (Eigen::Index r = 0; r < c.rows(); ++r) {
    if (r) out << "; ";
    for (Eigen::Index col = 0; col < c.cols(); ++col) out << (col ? " " : "") << format_double(c(r, col));
  }
  out << "\nsigma_v = " << format_double(cfg.measurement.sigma_v) << "\nseed = " << cfg.seeds.noise << "\n\n";

  out << "[filter]\nq = " << format_list(cfg.q_diag) << "\np0 = " << format_list(cfg.p0_diag)
      << "\nx0_hat = " << format_list(cfg.x0_hat) << "\n\n";

  out << "[run]\nname = " << cfg.name << "\nhorizon_steps = " << cfg.horizon_steps << "\nx0 = " << format_list(cfg.x0)
      << "\n";
  if (!cfg.output_dir.empty()) out << "output_dir = " << cfg.output_dir << "\n";
  return out.str();
}

}  // namespace nf
