// SPDX-License-Identifier: Apache-2.0
//
// fedcompress: runs the federated compression simulator in one or all modes
// and writes per-mode metrics, summaries and a comparison against FedAvg.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fedcompress/fedcompress.hpp"

namespace fs = std::filesystem;
using namespace fedcompress;

namespace {

std::string trial_suffix(std::size_t trial) { return trial == 0 ? "" : "_trial" + std::to_string(trial); }

int run(const ExperimentConfig& cfg) {
  const fs::path out = cfg.output_dir();
  fs::create_directories(out);
  const auto modes = cfg.modes();
  std::vector<std::vector<ExperimentResult>> runs(modes.size());

  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    const std::uint64_t seed = cfg.seed + trial;
    for (std::size_t i = 0; i < modes.size(); ++i) {
      const Mode mode = modes[i];
      const std::string stem = std::string(to_string(mode)) + trial_suffix(trial);
      std::ofstream csv(out / ("metrics_" + stem + ".csv"), std::ios::binary);
      if (!csv) throw std::runtime_error("cannot write to " + out.string());
      csv << metrics_header_comment(mode, seed) << "\n" << kMetricsHeader << "\n" << std::flush;
      auto result = run_experiment(cfg, mode, seed, [&](const RoundMetrics& m) {
        csv << metrics_row(m) << "\n" << std::flush;
        std::cerr << "[" << stem << "] round " << m.round << "  C=" << m.clusters << "  acc=" << m.test_accuracy
                  << "  bytes=" << m.cumulative_bytes << "  (" << m.wall_clock_seconds << " s)\n";
      });
      std::ofstream summary(out / ("summary_" + stem + ".txt"), std::ios::binary);
      summary << summary_text(result.summary, cfg);
      runs[i].push_back(std::move(result));
    }
  }

  if (std::find(modes.begin(), modes.end(), Mode::fedavg) != modes.end() && modes.size() > 1) {
    const auto rows = compare_to_fedavg(modes, runs);
    std::ofstream(out / "comparison.csv", std::ios::binary) << comparison_csv(rows);
    print_comparison(std::cout, rows);
  } else {
    for (std::size_t i = 0; i < modes.size(); ++i) {
      const auto& s = runs[i].front().summary;
      std::cout << to_string(s.mode) << ": accuracy " << s.final_accuracy << ", CCR " << s.ccr << ", MCR " << s.mcr
                << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning with dynamic weight clustering and server-side self-compression"};
  std::string config_path;
  app.add_option("--config", config_path, "Key-value configuration file")->check(CLI::ExistingFile);

  // Named shortcuts for the experiment.* keys.
  std::map<std::string, std::string> values;
  app.add_option("--mode", values["experiment.mode"], "fedavg | fixed-cluster | fedcompress-no-scs | fedcompress | all");
  app.add_option("--seed", values["experiment.seed"], "Base seed");
  app.add_option("--out", values["experiment.out"], "Output directory (default: $FEDCOMPRESS_OUT)");
  app.add_option("--trials", values["experiment.trials"], "Average over N consecutive seeds");
  bool print_config = false;
  app.add_flag("--print-config", print_config, "Print the resolved configuration and exit");

  for (const auto& key : config_keys()) {
    app.add_option("--" + key, values[key], "Configuration key " + key)->group("Configuration keys");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& key : config_keys()) {
    if (app.count("--" + key) > 0) overrides.emplace_back(key, values[key]);
  }
  for (const char* shortcut : {"--mode", "--seed", "--out", "--trials"}) {
    if (app.count(shortcut) > 0) {
      const std::string key = std::string("experiment.") + (shortcut + 2);
      overrides.emplace_back(key, values[key]);
    }
  }

  ExperimentConfig cfg;
  try {
    cfg = parse_config(config_path, overrides);
  } catch (const std::exception& e) {
    std::cerr << "fedcompress: configuration error: " << e.what() << "\n";
    return 2;
  }
  if (print_config) {
    std::cout << echo_config(cfg);
    return 0;
  }
  try {
    return run(cfg);
  } catch (const std::exception& e) {
    std::cerr << "fedcompress: " << e.what() << "\n";
    return 1;
  }
}
