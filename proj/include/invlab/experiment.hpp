#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "invlab/metrics.hpp"

namespace invlab {

inline constexpr const char* kToolVersion = "0.1.0";

/// Per-variant outcome: one metrics row, experiment-specific extras, and the
/// averaged attack traces (when the experiment attacks anything).
struct VariantResult {
  std::string name;
  MetricRow row;
  nlohmann::json extra = nlohmann::json::object();
  std::vector<double> confidence_trace;  // mean across the variant's attacks
  std::vector<double> grad_norm_trace;
  std::string trace_file;                // set by emit()
};

struct ExperimentReport {
  std::string experiment;
  nlohmann::json config_echo;  // fully resolved, replayable
  std::vector<VariantResult> variants;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

/// All experiment names with one-line descriptions, in stable order.
std::vector<std::pair<std::string, std::string>> list_experiments();

/// Materialize every default for the named experiment into a self-contained
/// config echo. Unknown experiment names raise UsageError.
nlohmann::json resolve_config(const nlohmann::json& user);

/// Run a resolved (or user) config. Deterministic given the echo. jobs > 1
/// executes variants in parallel with identical results.
ExperimentReport run_experiment(const nlohmann::json& config, int jobs = 1);

struct EmitResult {
  std::string report_path;
  std::string metrics_csv_path;
  std::vector<std::string> trace_paths;
  std::vector<std::string> table_paths;  // experiment-specific CSVs
};

/// Write report.json, metrics.csv and one CSV per trace under out_dir.
/// Re-emission overwrites. Trace files exist before the report references them.
EmitResult emit(ExperimentReport& report, const std::string& out_dir);

/// Golden-section minimizer of a*t^b*log(t) over (0, 1]; the numeric oracle
/// for the analytic minimizer exp(-1/b).
double minimize_ca_loss_numeric(double a, double b, double tol = 1e-9);

}  // namespace invlab
