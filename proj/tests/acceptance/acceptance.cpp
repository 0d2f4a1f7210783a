// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <sstream>
#include <unistd.h>
#include <vector>

#include "fedcompress/fedcompress.hpp"

using namespace fedcompress;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

ModelWeights random_net(std::vector<std::size_t> dims, std::uint64_t seed) {
  auto m = make_mlp(std::span<const std::size_t>(dims), seed);
  Rng rng(derive_seed(seed, {0xb1a5ULL}));
  for (auto& l : m.layers)
    for (auto& b : l.bias) b = rng.uniform(-0.3, 0.3);
  return m;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = scale * rng.normal();
  return m;
}

std::vector<double> flat(const Codebook& cb) {
  std::vector<double> v;
  for (const auto& l : cb.centroids) v.insert(v.end(), l.begin(), l.end());
  return v;
}

// --- 1 ---------------------------------------------------------------------
Outcome gradient_checks() {
  const auto start = Clock::now();
  const std::size_t instances = 25;
  double worst_ce = 0.0, worst_wc = 0.0, worst_kl = 0.0;
  std::size_t largest = 0;
  Rng rng(101);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::vector<std::size_t> dims{4 + i % 3, 6 + i % 5, 5, 3};
    const auto net = random_net(dims, 1000 + i);
    largest = std::max(largest, net.parameter_count());
    const auto x = random_matrix(6, dims[0], rng);
    std::vector<std::size_t> y(6);
    for (auto& v : y) v = rng.below(3);

    const auto ce = backward_ce(net, forward(net, x), y);
    worst_ce = std::max(worst_ce, finite_diff_check(
                                      [&](const ModelWeights& w) { return backward_ce(w, forward(w, x), y).loss; },
                                      net, ce.grads));

    auto cb = init_codebook(net, 2 + i % 7, i);
    for (auto& l : cb.centroids)
      for (auto& mu : l) mu += rng.uniform(-0.05, 0.05);
    const auto wc = wc_loss_and_grads(net, cb);
    worst_wc = std::max(worst_wc, finite_diff_check(
                                      [&](const ModelWeights& w) { return wc_loss_fixed(w, cb, wc.assignment); },
                                      net, wc.grad_weights));
    worst_wc = std::max(worst_wc, finite_diff_check(
                                      [&](const std::vector<double>& v) {
                                        Codebook c = cb;
                                        std::size_t k = 0;
                                        for (auto& l : c.centroids)
                                          for (auto& mu : l) mu = v[k++];
                                        return wc_loss_fixed(net, c, wc.assignment);
                                      },
                                      flat(cb), flat(wc.grad_centroids)));

    const auto teacher = random_net(dims, 2000 + i);
    const auto kl = distill_grads(net, teacher, x, 3.0);
    const auto tz = logits(teacher, x);
    worst_kl = std::max(worst_kl, finite_diff_check(
                                      [&](const ModelWeights& w) { return kld_loss({tz, logits(w, x), 3.0}); }, net,
                                      kl.grads));
  }
  const double elapsed = seconds_since(start);
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu instances each, <= %zu params; max rel err CE %.2e, wc %.2e, KLD %.2e; %.1f s",
                instances, largest, worst_ce, worst_wc, worst_kl, elapsed);
  return {worst_ce < 1e-4 && worst_wc < 1e-4 && worst_kl < 1e-4 && largest <= 500 && elapsed < 30.0, buf};
}

// --- 2 ---------------------------------------------------------------------
std::uint64_t independent_size(const ClusteredModel& m) {
  std::uint64_t bytes = 9;
  for (const auto& l : m.layers) {
    std::uint64_t bits = 0;
    while ((std::uint64_t{1} << bits) < l.codebook.size()) ++bits;
    bytes += 13 + 4 + 4 * l.codebook.size() + 4 + (std::uint64_t{l.rows} * l.cols * bits + 7) / 8 + 4 +
             4 * l.bias.size();
  }
  return bytes;
}

Outcome codec_round_trip() {
  Rng rng(202);
  const std::size_t cs[] = {2, 4, 15, 16, 32};
  std::size_t ok = 0;
  for (std::size_t t = 0; t < 1000; ++t) {
    const std::size_t c = cs[t % 5];
    const std::size_t depth = 1 + rng.below(3);
    std::vector<std::size_t> dims{1 + rng.below(20)};
    for (std::size_t i = 0; i < depth; ++i) dims.push_back(1 + rng.below(20));
    ClusteredModel m;
    for (std::size_t l = 0; l < depth; ++l) {
      ClusteredLayer cl;
      cl.rows = static_cast<std::uint32_t>(dims[l + 1]);
      cl.cols = static_cast<std::uint32_t>(dims[l]);
      for (std::size_t j = 0; j < c; ++j) cl.codebook.push_back(static_cast<float>(rng.normal()));
      for (std::size_t i = 0; i < std::size_t{cl.rows} * cl.cols; ++i)
        cl.indices.push_back(static_cast<std::uint32_t>(rng.below(c)));
      if (rng.uniform() < 0.7)
        for (std::size_t r = 0; r < cl.rows; ++r) cl.bias.push_back(static_cast<float>(rng.normal()));
      m.layers.push_back(std::move(cl));
      if (l + 1 < depth) m.activations.push_back(Activation::relu);
    }
    const auto bytes = encode(m);
    if (bytes.size() == independent_size(m) && decode(bytes) == m) ++ok;
  }
  const double mcr = model_compression_ratio(std::vector<LayerShape>{{1, 1000, false}}, 16);
  const bool mcr_ok = std::abs(mcr - 32000.0 / 4512.0) < 1e-6;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu/1000 exact round-trips; MCR(1000 weights, C=16) = %.6f", ok, mcr);
  return {ok == 1000 && mcr_ok, buf};
}

// --- 3 ---------------------------------------------------------------------
Outcome effective_rank() {
  bool ok = true;
  double worst_identity = 0.0;
  for (std::size_t k = 1; k <= 16; ++k)
    worst_identity = std::max(worst_identity, std::abs(embedding_score(Matrix::identity(k)) - double(k)));
  ok &= worst_identity < 1e-3;

  Matrix r1(8, 5);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 5; ++j) r1(i, j) = (i + 1.0) * (j - 2.5);
  const double rank_one = embedding_score(r1);
  ok &= std::abs(rank_one - 1.0) < 1e-3;

  const std::vector<double> s31{3, 1};
  const double three_one = effective_rank_score(s31);
  ok &= std::abs(three_one - 1.7548) < 1e-3;

  Rng rng(303);
  double worst_orth = 0.0, worst_scale = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 4 + rng.below(12), h = 2 + rng.below(8);
    const auto z = random_matrix(n, h, rng);
    const double base = embedding_score(z);
    // Random orthogonal Q from Gram-Schmidt on a Gaussian matrix.
    auto q = random_matrix(n, n, rng);
    for (std::size_t c = 0; c < n; ++c) {
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t r = 0; r < n; ++r) dot += q(r, c) * q(r, p);
        for (std::size_t r = 0; r < n; ++r) q(r, c) -= dot * q(r, p);
      }
      double norm = 0.0;
      for (std::size_t r = 0; r < n; ++r) norm += q(r, c) * q(r, c);
      norm = std::sqrt(norm);
      for (std::size_t r = 0; r < n; ++r) q(r, c) /= norm;
    }
    Matrix qz(n, h);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < h; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += q(r, k) * z(k, c);
        qz(r, c) = s;
      }
    worst_orth = std::max(worst_orth, std::abs(embedding_score(qz) - base));
    Matrix cz = z;
    const double scale = std::pow(10.0, rng.uniform(-2.0, 2.0));
    for (auto& v : cz.values()) v *= scale;
    worst_scale = std::max(worst_scale, std::abs(embedding_score(cz) - base));
  }
  ok &= worst_orth < 1e-6 && worst_scale < 1e-3;
  char buf[220];
  std::snprintf(buf, sizeof buf,
                "identity err %.1e; rank-one %.6f; sigma=[3,1] -> %.4f; orthogonal err %.1e, scale err %.1e (100 each)",
                worst_identity, rank_one, three_one, worst_orth, worst_scale);
  return {ok, buf};
}

// --- golden runs -------------------------------------------------------------
struct GoldenRuns {
  ExperimentConfig cfg;
  std::vector<ExperimentResult> results;  // one per mode, kAllModes order
  std::vector<double> seconds;
  double total_seconds = 0.0;

  const ExperimentResult& of(Mode m) const {
    return results[static_cast<std::size_t>(std::find(std::begin(kAllModes), std::end(kAllModes), m) -
                                            std::begin(kAllModes))];
  }
};

GoldenRuns run_all(std::size_t threads) {
  GoldenRuns g;
  g.cfg = parse_config("", {{"experiment.seed", "7"}, {"experiment.mode", "all"}});
  g.cfg.fed.threads = threads;
  const auto start = Clock::now();
  for (auto mode : kAllModes) {
    const auto t = Clock::now();
    g.results.push_back(run_experiment(g.cfg, mode, g.cfg.seed));
    g.seconds.push_back(seconds_since(t));
  }
  g.total_seconds = seconds_since(start);
  return g;
}

// --- 4 ---------------------------------------------------------------------
Outcome golden_comparison(const GoldenRuns& g) {
  const auto& avg = g.of(Mode::fedavg).summary.final_round;
  const auto& fc = g.of(Mode::fedcompress).summary.final_round;
  const double delta = 100.0 * (fc.test_accuracy - avg.test_accuracy);
  const double reduction = static_cast<double>(avg.cumulative_bytes) / static_cast<double>(fc.cumulative_bytes);
  const double secs = g.seconds[3];
  char buf[200];
  std::snprintf(buf, sizeof buf, "fedavg %.2f%%, fedcompress %.2f%% (%+.2f pp); bytes %.2fx smaller; %.1f s",
                100.0 * avg.test_accuracy, 100.0 * fc.test_accuracy, delta, reduction, secs);
  return {std::abs(delta) <= 5.0 && reduction >= 2.0 && secs < 300.0, buf};
}

// --- 5 ---------------------------------------------------------------------
Outcome score_tracks_accuracy(const GoldenRuns& g) {
  std::vector<double> score, acc;
  for (const auto& m : g.of(Mode::fedcompress).rounds) {
    score.push_back(m.score);
    acc.push_back(m.client_val_accuracy);
  }
  const double rho = spearman(score, acc);
  char buf[120];
  std::snprintf(buf, sizeof buf, "Spearman rho(score, client validation accuracy) = %.3f over %zu rounds", rho,
                score.size());
  return {rho > 0.5, buf};
}

// --- 6 ---------------------------------------------------------------------
Outcome self_compression(const GoldenRuns& g) {
  double min_reduction = INFINITY, max_drop = -INFINITY;
  for (const auto& m : g.of(Mode::fedcompress).rounds) {
    min_reduction = std::min(min_reduction, m.wc_exit > 0.0 ? m.wc_entry / m.wc_exit : INFINITY);
    max_drop = std::max(max_drop, 100.0 * (m.pre_snap_accuracy - m.test_accuracy));
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "min wc reduction %.1fx; max post-snap accuracy drop %.2f pp", min_reduction,
                max_drop);
  return {min_reduction >= 10.0 && max_drop < 2.0, buf};
}

// --- 7 ---------------------------------------------------------------------
Outcome controller(const GoldenRuns& g) {
  auto feed = [](ControllerState s, const std::vector<double>& xs) {
    std::vector<std::size_t> out;
    for (double x : xs) {
      s = update_cluster_count(s, x);
      out.push_back(s.clusters);
    }
    return out;
  };
  bool ok = true;
  const auto flat = feed(ControllerState::start(4, 32), std::vector<double>(12, 1.0));
  for (std::size_t i = 0; i < flat.size(); ++i) ok &= flat[i] == (i + 1 < 6 ? 4 : 4 + (i + 1 - 5));
  std::vector<double> rising;
  for (int i = 0; i < 50; ++i) rising.push_back(0.5 * i);
  for (auto c : feed(ControllerState::start(4, 32), rising)) ok &= c == 4;
  const auto capped = feed(ControllerState::start(4, 7), std::vector<double>(30, 1.0));
  ok &= capped.back() == 7;
  bool monotone = true;
  for (auto mode : {Mode::fedcompress, Mode::fedcompress_no_scs}) {
    const auto& rounds = g.of(mode).rounds;
    for (std::size_t i = 1; i < rounds.size(); ++i) monotone &= rounds[i].clusters >= rounds[i - 1].clusters;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "synthetic streams %s; C monotone in golden logs: %s (final C = %zu)",
                ok ? "as expected" : "WRONG", monotone ? "yes" : "no",
                g.of(Mode::fedcompress).summary.final_round.clusters);
  return {ok && monotone, buf};
}

// --- 8 ---------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> cli_csvs(const fs::path& out, const std::string& extra) {
  fs::remove_all(out);
  fs::create_directories(out);
  const std::string cmd = std::string(FEDCOMPRESS_CLI_PATH) + " --mode all --seed 7 --out " + out.string() + extra +
                          " >" + (out.string() + ".log") + " 2>&1";
  if (std::system(cmd.c_str()) != 0) throw std::runtime_error("CLI run failed: " + cmd);
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(out))
    if (e.path().extension() == ".csv") files[e.path().filename().string()] = slurp(e.path());
  return files;
}

Outcome determinism(const GoldenRuns& golden) {
  const fs::path root = fs::temp_directory_path() / ("fedcompress_acceptance_" + std::to_string(::getpid()));
  const auto a = cli_csvs(root / "a", "");
  const auto b = cli_csvs(root / "b", "");
  const auto threaded = cli_csvs(root / "t", " --fed.threads 4");
  fs::remove_all(root);
  std::size_t bytes = 0;
  for (const auto& [name, text] : a) bytes += text.size();
  // The CLI and the in-process golden run must agree as well.
  std::string expected = metrics_header_comment(Mode::fedcompress, 7) + "\n" + kMetricsHeader + "\n";
  for (const auto& m : golden.of(Mode::fedcompress).rounds) expected += metrics_row(m) + "\n";
  const bool same = a == b && a.size() == 5;
  const bool thread_free = a == threaded;
  const bool matches_library = a.count("metrics_fedcompress.csv") && a.at("metrics_fedcompress.csv") == expected;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu CSVs (%zu bytes) identical across runs: %s; with 4 threads: %s; CLI = library: %s",
                a.size(), bytes, same ? "yes" : "no", thread_free ? "yes" : "no", matches_library ? "yes" : "no");
  return {same && thread_free && matches_library, buf};
}

// --- 9 ---------------------------------------------------------------------
Outcome aggregation_breaks_clustering() {
  std::size_t broken = 0;
  const std::size_t c = 8;
  for (std::uint64_t t = 0; t < 100; ++t) {
    const auto a = random_net({8, 16, 4}, 5000 + t);
    const auto b = random_net({8, 16, 4}, 6000 + t);
    const std::vector<ModelWeights> snapped{decompress(snap(a, init_codebook(a, c, t))),
                                            decompress(snap(b, init_codebook(b, c, t + 100)))};
    const std::vector<double> counts{1.0, 1.0};
    const auto avg = fedavg_aggregate(snapped, counts);
    bool all_layers = true;
    for (const auto& l : avg.layers) {
      const std::set<double> distinct(l.weight.values().begin(), l.weight.values().end());
      all_layers &= distinct.size() > c;
    }
    broken += all_layers;
  }
  char buf[120];
  std::snprintf(buf, sizeof buf, "%zu/100 averages exceed C = %zu distinct values in every layer", broken, c);
  return {broken >= 95, buf};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };
  auto guarded = [&](int id, const char* name, const std::function<Outcome()>& f) {
    try {
      report(id, name, f());
    } catch (const std::exception& e) {
      report(id, name, {false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, "gradient checks", gradient_checks);
  guarded(2, "codec round trip", codec_round_trip);
  guarded(3, "effective rank", effective_rank);

  GoldenRuns golden;
  std::string golden_error;
  try {
    golden = run_all(1);
  } catch (const std::exception& e) {
    golden_error = e.what();
  }
  auto needs_golden = [&](int id, const char* name, const std::function<Outcome(const GoldenRuns&)>& f) {
    if (!golden_error.empty()) {
      report(id, name, {false, "golden run failed: " + golden_error});
      return;
    }
    guarded(id, name, [&] { return f(golden); });
  };
  needs_golden(4, "golden comparison", golden_comparison);
  needs_golden(5, "score tracks accuracy", score_tracks_accuracy);
  needs_golden(6, "self-compression", self_compression);
  needs_golden(7, "cluster controller", controller);
  needs_golden(8, "determinism", determinism);
  guarded(9, "aggregation breaks clustering", aggregation_breaks_clustering);

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
