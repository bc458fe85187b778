// invlab command line: run config-driven experiments, list them, or check the
// confidence-adaptation loss calibration.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "invlab/experiment.hpp"

namespace {

using invlab::UsageError;

std::string resolve_out_dir(const std::string& cli_out, const nlohmann::json& cfg) {
  if (!cli_out.empty()) return cli_out;
  const std::string cfg_out = cfg.value("out_dir", std::string());
  if (!cfg_out.empty()) return cfg_out;
  const std::string name = cfg.at("experiment").get<std::string>();
  if (const char* root = std::getenv("INVLAB_OUT")) {
    return (std::filesystem::path(root) / name).string();
  }
  return (std::filesystem::path("out") / name).string();
}

int run_command(const std::string& config_path, const std::string& out_dir, long long seed,
                bool have_seed, int jobs, bool grid) {
  std::ifstream in(config_path);
  if (!in) {
    std::cerr << "error: cannot open config '" << config_path << "'\n";
    return 1;
  }
  nlohmann::json user;
  try {
    in >> user;
  } catch (const std::exception& e) {
    std::cerr << "error: config parse failed: " << e.what() << "\n";
    return 1;
  }
  if (have_seed) user["seed"] = seed;
  if (grid) user["grid"] = true;

  nlohmann::json resolved;
  try {
    resolved = invlab::resolve_config(user);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  const std::string dir = resolve_out_dir(out_dir, resolved);
  resolved["out_dir"] = dir;

  try {
    auto report = invlab::run_experiment(resolved, jobs);
    auto emitted = invlab::emit(report, dir);
    std::cout << "experiment: " << report.experiment << "\n";
    std::cout << "variants:   " << report.variants.size() << "\n";
    std::cout << "wall:       " << report.wall_seconds << " s\n";
    std::cout << "report:     " << emitted.report_path << "\n";
    std::cout << "metrics:    " << emitted.metrics_csv_path << "\n";
    for (const auto& p : emitted.trace_paths) std::cout << "trace:      " << p << "\n";
    for (const auto& p : emitted.table_paths) std::cout << "table:      " << p << "\n";
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int list_command() {
  for (const auto& [name, description] : invlab::list_experiments()) {
    std::printf("%-20s %s\n", name.c_str(), description.c_str());
  }
  return 0;
}

int calibrate_command(const std::vector<double>& b_values) {
  try {
    std::printf("%-8s %-22s %-22s %s\n", "b", "numeric", "exp(-1/b)", "abs err");
    for (double b : b_values) {
      const double numeric = invlab::minimize_ca_loss_numeric(1.0, b);
      const double analytic = std::exp(-1.0 / b);
      std::printf("%-8g %-22.15g %-22.15g %.3g\n", b, numeric, analytic,
                  std::abs(numeric - analytic));
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"invlab: model-inversion attack and defense laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  long long seed = 0;
  int jobs = 1;
  bool grid = false;
  auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
  run->add_option("config", config_path, "experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "output directory (overrides config and INVLAB_OUT)");
  auto* seed_opt = run->add_option("--seed", seed, "override the base seed");
  run->add_option("--jobs", jobs, "parallel variant workers")->check(CLI::PositiveNumber);
  run->add_flag("--grid", grid, "emit dense confidence grids (toy2d-defense-grid)");

  auto* list = app.add_subcommand("list", "list experiments");

  std::vector<double> b_values;
  auto* calibrate = app.add_subcommand("calibrate", "locate the CA-loss minimizer numerically");
  calibrate->add_option("--b", b_values, "exponent values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (run->parsed()) {
    return run_command(config_path, out_dir, seed, seed_opt->count() > 0, jobs, grid);
  }
  if (list->parsed()) return list_command();
  if (calibrate->parsed()) return calibrate_command(b_values);
  return 1;
}
