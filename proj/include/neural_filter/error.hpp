#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nf {

enum class ErrorKind {
  invalid_argument,
  invalid_state,
  degenerate_configuration,
  integration_failure,
  divergence,
  invalid_architecture,
  format_version,
  truncated_file,
  shape_mismatch,
  training_divergence,
  filter_divergence,
  numerical_failure,
  invalid_comparison,
  config,
  io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::invalid_state: return "invalid-state";
    case ErrorKind::degenerate_configuration: return "degenerate-configuration";
    case ErrorKind::integration_failure: return "integration-failure";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::invalid_architecture: return "invalid-architecture";
    case ErrorKind::format_version: return "format-version";
    case ErrorKind::truncated_file: return "truncated-file";
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::training_divergence: return "training-divergence";
    case ErrorKind::filter_divergence: return "filter-divergence";
    case ErrorKind::numerical_failure: return "numerical-failure";
    case ErrorKind::invalid_comparison: return "invalid-comparison";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

/// Exception type for every failure raised by the library. The kind lets
/// callers branch without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace nf
