// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fedcompress/config.hpp"
#include "fedcompress/data.hpp"
#include "fedcompress/nn.hpp"
#include "fedcompress/random.hpp"
#include "fedcompress/runtime.hpp"

namespace fedcompress {

/// Everything a run needs that does not depend on the mode.
struct ExperimentSetup {
  Dataset train;
  Dataset test;
  std::vector<ClientState> clients;
  Batch ood;
  ModelWeights initial;
};

inline ExperimentSetup prepare_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset full = cfg.data.path.empty()
                     ? make_blobs(cfg.data.classes, cfg.data.dim, cfg.data.samples, cfg.data.spread,
                                  derive_seed(seed, {0xda7aULL}), cfg.data.radius, cfg.data.offset)
                     : load_dataset_csv(cfg.data.path);
  auto [train, test] = split_holdout(full, cfg.data.test_fraction, derive_seed(seed, {0x7e57ULL}));
  PartitionSpec spec = cfg.partition;
  spec.clients = cfg.fed.clients;
  spec.seed = derive_seed(seed, {0x9a47ULL});
  ExperimentSetup s;
  s.clients = partition(train, spec);
  const auto [lo, hi] = coordinate_range(train.inputs);
  s.ood = make_ood(train.inputs.cols(), cfg.data.ood_samples, derive_seed(seed, {0x00dULL}), lo, hi);
  s.initial = make_mlp(cfg.layer_dims(train.inputs.cols(), full.classes), derive_seed(seed, {0x1417ULL}));
  s.train = std::move(train);
  s.test = std::move(test);
  return s;
}

struct Summary {
  Mode mode = Mode::fedcompress;
  std::uint64_t seed = 0;
  RoundMetrics final_round;
  std::uint64_t upstream_bytes_total = 0;
  std::uint64_t downstream_bytes_total = 0;
  std::uint64_t fedavg_bytes = 0;  // traffic of the uncompressed baseline under the same config
  double ccr = 1.0;
  double mcr = 1.0;
  double final_accuracy = 0.0;
};

struct ExperimentResult {
  std::vector<RoundMetrics> rounds;
  Summary summary;
};

/// R rounds of `mode`. `on_round` sees every round as soon as it finishes, so
/// callers can persist partial progress if a later round throws.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, Mode mode, std::uint64_t seed,
                                       const std::function<void(const RoundMetrics&)>& on_round = {}) {
  const auto setup = prepare_experiment(cfg, seed);
  FedConfig fed = cfg.fed;
  fed.mode = mode;
  ServerState server = make_server(setup.initial, setup.ood, cfg.train, fed, cfg.controller.initial_state(), seed);
  ExperimentResult result;
  for (std::size_t r = 0; r < fed.rounds; ++r) {
    auto m = run_round(server, setup.clients, setup.test);
    result.summary.upstream_bytes_total += m.upstream_bytes;
    result.summary.downstream_bytes_total += m.downstream_bytes;
    result.rounds.push_back(m);
    if (on_round) on_round(m);
  }
  auto& s = result.summary;
  s.mode = mode;
  s.seed = seed;
  s.final_round = result.rounds.back();
  s.fedavg_bytes = 2 * fed.participants * fed.rounds * raw_bytes(setup.initial);
  s.ccr = static_cast<double>(s.fedavg_bytes) / static_cast<double>(s.final_round.cumulative_bytes);
  s.mcr = s.final_round.mcr;
  s.final_accuracy = s.final_round.test_accuracy;
  return result;
}

}  // namespace fedcompress
