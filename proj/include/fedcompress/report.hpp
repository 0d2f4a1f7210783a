// SPDX-License-Identifier: Apache-2.0
#pragma once

// Metrics CSV, summary documents and the baseline comparison table.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedcompress/config.hpp"
#include "fedcompress/error.hpp"
#include "fedcompress/experiment.hpp"
#include "fedcompress/runtime.hpp"

namespace fedcompress {

inline constexpr const char* kMetricsHeader =
    "round,clusters,test_accuracy,pre_snap_accuracy,client_val_accuracy,score,wc_entry,wc_exit,"
    "upstream_bytes,downstream_bytes,cumulative_bytes,cumulative_ccr,mcr";

inline std::string metrics_header_comment(Mode mode, std::uint64_t seed) {
  return "# fedcompress-metrics v1 mode=" + std::string(to_string(mode)) + " seed=" + std::to_string(seed);
}

inline std::string metrics_row(const RoundMetrics& m) {
  using detail::format_double;
  std::string s;
  s += std::to_string(m.round) + "," + std::to_string(m.clusters) + ",";
  s += format_double(m.test_accuracy) + "," + format_double(m.pre_snap_accuracy) + ",";
  s += format_double(m.client_val_accuracy) + "," + format_double(m.score) + ",";
  s += format_double(m.wc_entry) + "," + format_double(m.wc_exit) + ",";
  s += std::to_string(m.upstream_bytes) + "," + std::to_string(m.downstream_bytes) + ",";
  s += std::to_string(m.cumulative_bytes) + "," + format_double(m.cumulative_ccr) + "," + format_double(m.mcr);
  return s;
}

/// Parses rows written by `metrics_row`; comment lines and the header are skipped.
inline std::vector<RoundMetrics> read_metrics_csv(std::istream& in) {
  std::vector<RoundMetrics> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("round,", 0) == 0) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 13) throw InvalidInput("metrics row has " + std::to_string(f.size()) + " fields: " + line);
    RoundMetrics m;
    m.round = std::stoull(f[0]);
    m.clusters = std::stoull(f[1]);
    m.test_accuracy = std::stod(f[2]);
    m.pre_snap_accuracy = std::stod(f[3]);
    m.client_val_accuracy = std::stod(f[4]);
    m.score = std::stod(f[5]);
    m.wc_entry = std::stod(f[6]);
    m.wc_exit = std::stod(f[7]);
    m.upstream_bytes = std::stoull(f[8]);
    m.downstream_bytes = std::stoull(f[9]);
    m.cumulative_bytes = std::stoull(f[10]);
    m.cumulative_ccr = std::stod(f[11]);
    m.mcr = std::stod(f[12]);
    rows.push_back(m);
  }
  return rows;
}

/// Final-round metrics, the run totals, then the resolved configuration.
inline std::string summary_text(const Summary& s, const ExperimentConfig& cfg) {
  using detail::format_double;
  const auto& m = s.final_round;
  std::ostringstream o;
  o << "mode = " << to_string(s.mode) << "\n";
  o << "seed = " << s.seed << "\n";
  o << "round = " << m.round << "\n";
  o << "clusters = " << m.clusters << "\n";
  o << "test_accuracy = " << format_double(m.test_accuracy) << "\n";
  o << "pre_snap_accuracy = " << format_double(m.pre_snap_accuracy) << "\n";
  o << "client_val_accuracy = " << format_double(m.client_val_accuracy) << "\n";
  o << "score = " << format_double(m.score) << "\n";
  o << "wc_entry = " << format_double(m.wc_entry) << "\n";
  o << "wc_exit = " << format_double(m.wc_exit) << "\n";
  o << "upstream_bytes = " << m.upstream_bytes << "\n";
  o << "downstream_bytes = " << m.downstream_bytes << "\n";
  o << "cumulative_bytes = " << m.cumulative_bytes << "\n";
  o << "cumulative_ccr = " << format_double(m.cumulative_ccr) << "\n";
  o << "mcr = " << format_double(m.mcr) << "\n";
  o << "upstream_bytes_total = " << s.upstream_bytes_total << "\n";
  o << "downstream_bytes_total = " << s.downstream_bytes_total << "\n";
  o << "fedavg_bytes = " << s.fedavg_bytes << "\n";
  o << "ccr_vs_fedavg = " << format_double(s.ccr) << "\n";
  o << "final_accuracy = " << format_double(s.final_accuracy) << "\n";
  std::istringstream echo(echo_config(cfg));
  for (std::string line; std::getline(echo, line);) o << "config." << line << "\n";
  return o.str();
}

struct ComparisonRow {
  Mode mode = Mode::fedavg;
  double accuracy = 0.0;   // final test accuracy, mean over trials
  double delta_acc = 0.0;  // percentage points versus fedavg
  double ccr = 1.0;        // fedavg cumulative bytes / mode cumulative bytes
  double mcr = 1.0;
  std::uint64_t cumulative_bytes = 0;  // first trial
};

/// One row per mode. `runs[mode][trial]` must include fedavg with the same trial count.
inline std::vector<ComparisonRow> compare_to_fedavg(const std::vector<Mode>& modes,
                                                    const std::vector<std::vector<ExperimentResult>>& runs) {
  const auto fedavg_at = std::find(modes.begin(), modes.end(), Mode::fedavg);
  if (fedavg_at == modes.end()) throw ContractViolation("comparison needs a fedavg run");
  const auto& base = runs[static_cast<std::size_t>(fedavg_at - modes.begin())];
  std::vector<ComparisonRow> rows;
  for (std::size_t i = 0; i < modes.size(); ++i) {
    ComparisonRow row{modes[i], 0.0, 0.0, 0.0, 0.0, 0};
    const auto& trials = runs[i];
    if (trials.size() != base.size()) throw ContractViolation("all modes need the same number of trials");
    for (std::size_t t = 0; t < trials.size(); ++t) {
      const auto& fin = trials[t].summary.final_round;
      const auto& ref = base[t].summary.final_round;
      row.accuracy += fin.test_accuracy;
      row.delta_acc += 100.0 * (fin.test_accuracy - ref.test_accuracy);
      row.ccr += static_cast<double>(ref.cumulative_bytes) / static_cast<double>(fin.cumulative_bytes);
      row.mcr += fin.mcr;
    }
    const double n = static_cast<double>(trials.size());
    row.accuracy /= n;
    row.delta_acc /= n;
    row.ccr /= n;
    row.mcr /= n;
    row.cumulative_bytes = trials.front().summary.final_round.cumulative_bytes;
    rows.push_back(row);
  }
  return rows;
}

inline std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  using detail::format_double;
  std::string s = "# fedcompress-comparison v1\nmode,accuracy,delta_acc,ccr,mcr,cumulative_bytes\n";
  for (const auto& r : rows) {
    s += std::string(to_string(r.mode)) + "," + format_double(r.accuracy) + "," + format_double(r.delta_acc) + "," +
         format_double(r.ccr) + "," + format_double(r.mcr) + "," + std::to_string(r.cumulative_bytes) + "\n";
  }
  return s;
}

inline void print_comparison(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  char line[160];
  std::snprintf(line, sizeof line, "%-20s %10s %8s %7s %7s\n", "mode", "accuracy", "d-Acc", "CCR", "MCR");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-20s %9.2f%% %+8.2f %7.2f %7.2f\n", std::string(to_string(r.mode)).c_str(),
                  100.0 * r.accuracy, r.delta_acc, r.ccr, r.mcr);
    out << line;
  }
}

/// Ranks starting at 1; ties share their average rank.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidInput("correlation needs two equal-length series");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

}  // namespace fedcompress
