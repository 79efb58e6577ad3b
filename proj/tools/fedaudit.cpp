#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fedaudit/experiment.hpp"

// Exit codes: 0 success, 1 runtime failure, 2 invalid config or usage.

namespace {

fedaudit::ExperimentConfig load_config(const std::string& path) {
  return fedaudit::parse_experiment_config(fedaudit::read_file(path));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated fine-tuning simulator and membership audit"};
  app.require_subcommand(1);

  std::string run_config;
  std::string run_output_dir;
  double run_tau = -1.0;
  bool run_export = false;
  auto* run = app.add_subcommand("run", "train and evaluate the attack grid");
  run->add_option("config", run_config, "experiment config JSON")->required();
  run->add_option("--output-dir", run_output_dir, "override config output_dir");
  run->add_option("--tau", run_tau, "override config tau");
  run->add_flag("--export-trace", run_export, "also dump binary traces");

  std::size_t scan_n = 64, scan_m = 32, scan_p_lo = 1, scan_p_hi = 64;
  std::size_t scan_trials = 50;
  std::uint64_t scan_seed = 1;
  std::string scan_out = "boundary.csv";
  auto* scan = app.add_subcommand("scan-boundary",
                                  "sweep batch tokens p and report the sharp "
                                  "recovery boundary");
  scan->add_option("--n", scan_n, "hidden width")->required();
  scan->add_option("--m", scan_m, "module output width")->required();
  scan->add_option("--p-min", scan_p_lo, "first p value");
  scan->add_option("--p-max", scan_p_hi, "last p value")->required();
  scan->add_option("--trials", scan_trials, "trials per p");
  scan->add_option("--seed", scan_seed, "scan seed");
  scan->add_option("--out", scan_out, "output CSV path");

  std::string export_config;
  auto* exp = app.add_subcommand("export-trace",
                                 "train once and dump the binary trace");
  exp->add_option("config", export_config, "experiment config JSON")->required();

  std::string attack_trace_dir;
  std::string attack_config;
  auto* attack = app.add_subcommand("attack", "attack a previously dumped trace");
  attack->add_option("trace-dir", attack_trace_dir, "directory with round_*.bin")
      ->required();
  attack->add_option("config", attack_config, "attack config JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      fedaudit::ExperimentConfig cfg = load_config(run_config);
      if (!run_output_dir.empty()) cfg.output_dir = run_output_dir;
      if (run_tau > 0.0) cfg.tau = run_tau;
      if (run_export) cfg.export_trace = true;
      cfg.validate();
      return fedaudit::run_experiment(cfg, std::cout);
    }
    if (*scan)
      return fedaudit::run_boundary_scan(scan_n, scan_m, scan_p_lo, scan_p_hi,
                                         scan_trials, scan_seed, scan_out,
                                         std::cout);
    if (*exp)
      return fedaudit::run_export_trace(load_config(export_config), std::cout);
    if (*attack)
      return fedaudit::run_attack_on_trace(attack_trace_dir,
                                           load_config(attack_config), std::cout);
  } catch (const fedaudit::ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
