// SPDX-License-Identifier: Apache-2.0
//
// Experiment runner for the two-piece-media Maxwell inverse problems.
//
//   dapinn run --config <file-or-preset> [--seed N] [--iters K]
//              [--mode da-pinn|baseline|both] [--out DIR] [--threads N]
//   dapinn report DIR... [--csv FILE]
//   dapinn export-grid --run DIR --field <name> [--nx N] [--nt N] [--ny N]
//              [--t S] [--out FILE]

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dapinn/experiment.hpp"

namespace cli = dapinn::cli;

int main(int argc, char** argv) {
  CLI::App app{"domain-adaptive PINN experiments for Maxwell inverse problems"};
  app.require_subcommand(1);

  // --- run ---
  auto* run = app.add_subcommand("run", "train per a JSON config (or named preset)");
  std::string config_arg;
  run->add_option("--config", config_arg, "config file path, or preset name "
                                          "(paper-1d|paper-2d|paper-2d-desk)")
      ->required();
  std::optional<std::uint64_t> seed;
  run->add_option("--seed", seed, "override the run seed");
  std::optional<int> iters;
  run->add_option("--iters", iters, "override the iteration budget");
  std::optional<std::string> mode;
  run->add_option("--mode", mode, "override the mode: da-pinn|baseline|both");
  std::optional<std::string> out_dir;
  run->add_option("--out", out_dir, "override the output directory");
  std::optional<int> threads;
  run->add_option("--threads", threads, "override the worker-thread count");

  // --- report ---
  auto* report = app.add_subcommand("report", "compare finished run directories");
  std::vector<std::string> report_dirs;
  report->add_option("dirs", report_dirs, "run directories")->required()->expected(-1);
  std::string report_csv_path = "comparison.csv";
  report->add_option("--csv", report_csv_path, "where to write the comparison CSV");

  // --- export-grid ---
  auto* egrid = app.add_subcommand("export-grid", "recompute an absolute-error grid");
  std::string grid_run, grid_field;
  egrid->add_option("--run", grid_run, "run directory")->required();
  egrid->add_option("--field", grid_field, "field name (e.g. ey)")->required();
  int nx = 201, nt = 201, ny = 101;
  egrid->add_option("--nx", nx, "grid columns along x");
  egrid->add_option("--nt", nt, "grid rows along t (1D cases)");
  egrid->add_option("--ny", ny, "grid rows along y (2D cases)");
  std::optional<double> t_slice;
  egrid->add_option("--t", t_slice, "time slice (2D cases; default T/2)");
  std::optional<std::string> grid_out;
  egrid->add_option("--out", grid_out, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      cli::ExperimentConfig cfg;
      if (std::filesystem::exists(config_arg)) {
        cfg = cli::load_config_file(config_arg);
      } else {
        cfg = cli::preset(config_arg);
      }
      if (seed) cfg.seed = *seed;
      if (iters) cfg.train.max_iters = *iters;
      if (mode) {
        if (*mode != "da-pinn" && *mode != "baseline" && *mode != "both")
          throw dapinn::config_error("invalid value for 'mode': '" + *mode +
                                     "' (expected da-pinn|baseline|both)");
        cfg.mode = *mode;
      }
      if (out_dir) cfg.out_dir = *out_dir;
      if (threads) cfg.train.threads = *threads;
      const auto artifacts = cli::run_experiment(cfg);
      for (const auto& a : artifacts) {
        if (a.aborted)
          std::fprintf(stderr, "warning: run in %s aborted early; see metrics.json\n",
                       a.dir.c_str());
      }
      return 0;
    }
    if (*report) {
      const auto rows = cli::report_rows(report_dirs);
      std::fputs(cli::report_text(rows).c_str(), stdout);
      cli::detail::write_text(report_csv_path, cli::report_csv(rows));
      std::printf("wrote %s\n", report_csv_path.c_str());
      return 0;
    }
    if (*egrid) {
      const auto path = cli::export_error_grid_from_run(grid_run, grid_field, nx, nt, ny,
                                                        t_slice, grid_out);
      std::printf("wrote %s\n", path.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
