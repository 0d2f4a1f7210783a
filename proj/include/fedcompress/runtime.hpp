// SPDX-License-Identifier: Apache-2.0
#pragma once

// Federated round machinery: local client training with weight clustering,
// FedAvg aggregation of weights and scores, server-side self-compression by
// distillation on OOD data, and per-round communication accounting.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "fedcompress/codec.hpp"
#include "fedcompress/compression.hpp"
#include "fedcompress/controller.hpp"
#include "fedcompress/data.hpp"
#include "fedcompress/distillation.hpp"
#include "fedcompress/error.hpp"
#include "fedcompress/nn.hpp"
#include "fedcompress/random.hpp"
#include "fedcompress/rep_score.hpp"

namespace fedcompress {

enum class Mode { fedavg, fixed_cluster, fedcompress_no_scs, fedcompress };

inline constexpr Mode kAllModes[] = {Mode::fedavg, Mode::fixed_cluster, Mode::fedcompress_no_scs, Mode::fedcompress};

constexpr std::string_view to_string(Mode m) noexcept {
  switch (m) {
    case Mode::fedavg: return "fedavg";
    case Mode::fixed_cluster: return "fixed-cluster";
    case Mode::fedcompress_no_scs: return "fedcompress-no-scs";
    case Mode::fedcompress: return "fedcompress";
  }
  return "unknown";
}

inline std::optional<Mode> parse_mode(std::string_view s) {
  for (auto m : kAllModes)
    if (to_string(m) == s) return m;
  return std::nullopt;
}

constexpr bool clusters_on_client(Mode m) noexcept { return m != Mode::fedavg; }
constexpr bool dynamic_clusters(Mode m) noexcept {
  return m == Mode::fedcompress || m == Mode::fedcompress_no_scs;
}

struct FedConfig {
  std::size_t clients = 10;       // M
  std::size_t participants = 10;  // K
  std::size_t rounds = 15;        // R
  std::size_t fixed_clusters = 15;
  std::size_t threads = 1;
  Mode mode = Mode::fedcompress;

  void validate() const {
    if (clients < 1) throw InvalidInput("fed.clients must be at least 1");
    if (participants < 1 || participants > clients) {
      throw InvalidInput("fed.participants (" + std::to_string(participants) + ") must lie in [1, fed.clients = " +
                         std::to_string(clients) + "]");
    }
    if (rounds < 1) throw InvalidInput("fed.rounds must be at least 1");
    if (fixed_clusters < 1) throw InvalidInput("fed.fixed_clusters must be at least 1");
    if (threads < 1) throw InvalidInput("fed.threads must be at least 1");
  }
};

// ---------------------------------------------------------------------------
// Client side

/// Visit order of the labeled set in a given epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {0x5eedULL, epoch}));
  rng.shuffle(order);
  return order;
}

inline Batch slice(const Batch& b, std::span<const std::size_t> rows) {
  Batch out{gather_rows(b.inputs, rows), std::nullopt};
  if (b.labels) {
    std::vector<std::size_t> l;
    for (auto r : rows) l.push_back((*b.labels)[r]);
    out.labels = std::move(l);
  }
  return out;
}

struct ClientResult {
  std::size_t client_id = 0;
  ModelWeights weights;
  std::optional<Codebook> codebook;  // absent when clustering is off
  double score = 0.0;
  double validation_accuracy = 0.0;
  std::vector<double> wc_per_epoch;  // L_wc at the end of each clustered epoch
};

/// E_c epochs of mini-batch SGD on the labeled set. With `clusters` > 0 the
/// first beta_warmup_epochs epochs use plain cross-entropy, after which the
/// codebook is initialised by k-means and L_ce + beta * L_wc is minimised
/// jointly over weights and centroids. `clusters` == 0 disables clustering.
inline ClientResult client_update(const ModelWeights& global, std::size_t clusters, const ClientState& client,
                                  const TrainConfig& cfg, std::uint64_t seed) {
  if (client.labeled.size() == 0 || client.unlabeled.rows() == 0) {
    throw InvalidInput("client " + std::to_string(client.id) + " has no labeled or no unlabeled data");
  }
  ClientResult out;
  out.client_id = client.id;
  ModelWeights theta = global;
  std::optional<Codebook> codebook;
  const std::size_t n = client.labeled.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs_client; ++epoch) {
    const bool clustering = clusters > 0 && epoch >= cfg.beta_warmup_epochs && cfg.beta_client > 0.0;
    if (clustering && !codebook) codebook = init_codebook(theta, clusters, derive_seed(seed, {0xc0deULL}));
    const auto order = epoch_order(n, seed, static_cast<std::size_t>(epoch));
    for (std::size_t start = 0; start < n; start += batch) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(batch, n - start));
      const Batch b = slice(client.labeled, rows);
      auto step = backward_ce(theta, forward(theta, b.inputs), b.labels);
      if (clustering) {
        const auto wc = wc_loss_and_grads(theta, *codebook);
        axpy(step.grads, wc.grad_weights, cfg.beta_client);
        centroid_step(*codebook, wc, cfg.lr_client * cfg.beta_client);
      }
      theta = sgd_step(std::move(theta), step.grads, cfg.lr_client);
    }
    if (clustering) out.wc_per_epoch.push_back(wc_loss(theta, *codebook));
  }
  if (!theta.all_finite()) throw InvalidInput("client " + std::to_string(client.id) + " diverged to non-finite weights");

  try {
    out.score = client_score(theta, client.unlabeled);
  } catch (const DegenerateEmbedding& e) {
    throw DegenerateEmbedding("client " + std::to_string(client.id) + ": " + e.what());
  }
  out.validation_accuracy = accuracy(theta, client.unlabeled, client.unlabeled_truth);
  out.weights = std::move(theta);
  if (codebook) {
    out.codebook = std::move(codebook);
  } else if (clusters > 0) {
    out.codebook = init_codebook(out.weights, clusters, derive_seed(seed, {0xc0deULL}));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

/// sum_k (N_k / N) * theta_k.
inline ModelWeights fedavg_aggregate(std::span<const ModelWeights> models, std::span<const double> sample_counts) {
  if (models.empty()) throw ContractViolation("fedavg_aggregate needs at least one update");
  if (models.size() != sample_counts.size()) throw ContractViolation("one sample count per update is required");
  const double total = std::accumulate(sample_counts.begin(), sample_counts.end(), 0.0);
  if (!(total > 0.0)) throw ContractViolation("total sample count must be positive");
  ModelWeights out = zeros_like(models.front());
  for (std::size_t k = 0; k < models.size(); ++k) {
    if (!same_shape(models[k], out)) throw ContractViolation("updates disagree on model shape");
    axpy(out, models[k], sample_counts[k] / total);
  }
  return out;
}

inline double score_aggregate(std::span<const double> scores, std::span<const double> sample_counts) {
  if (scores.empty()) throw ContractViolation("score_aggregate needs at least one score");
  if (scores.size() != sample_counts.size()) throw ContractViolation("one sample count per score is required");
  const double total = std::accumulate(sample_counts.begin(), sample_counts.end(), 0.0);
  if (!(total > 0.0)) throw ContractViolation("total sample count must be positive");
  double s = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) s += sample_counts[k] / total * scores[k];
  return s;
}

// ---------------------------------------------------------------------------
// Server side

/// Student gradient of the distillation loss on one unlabeled batch.
inline LossAndGrads distill_grads(const ModelWeights& student, const ModelWeights& teacher, const Matrix& unlabeled,
                                  double temperature) {
  auto fwd = forward(student, unlabeled);
  LogitsPair pair{logits(teacher, unlabeled), fwd.logits, temperature};
  LossAndGrads out;
  out.loss = kld_loss(pair);
  out.grads = backward(student, fwd.cache, kld_grad_student(pair));
  return out;
}

struct SelfCompressResult {
  ModelWeights weights;  // trained, not yet snapped
  Codebook codebook;
  double wc_entry = 0.0;   // L_wc of the input under its k-means codebook
  double wc_exit = 0.0;    // L_wc of the output under the trained codebook
  double kld_to_entry = 0.0;
};

/// E_s epochs of L_kl(teacher || student) + beta_s * L_wc on the OOD set. The
/// teacher is a frozen copy of the student taken at the start of every epoch.
inline SelfCompressResult self_compress(const ModelWeights& theta, std::size_t clusters, const Batch& ood,
                                        const TrainConfig& cfg, std::uint64_t seed) {
  if (ood.size() == 0) throw InvalidInput("self-compression needs a non-empty OOD set");
  if (clusters < 1) throw InvalidInput("self-compression needs at least one cluster");
  SelfCompressResult out;
  out.weights = theta;
  out.codebook = init_codebook(theta, clusters, derive_seed(seed, {0xc0deULL}));
  out.wc_entry = wc_loss(theta, out.codebook);
  const std::size_t n = ood.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs_server; ++epoch) {
    const ModelWeights teacher = out.weights;
    const auto order = epoch_order(n, seed, static_cast<std::size_t>(epoch));
    for (std::size_t start = 0; start < n; start += batch) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(batch, n - start));
      const Matrix x = gather_rows(ood.inputs, rows);
      auto step = distill_grads(out.weights, teacher, x, cfg.temperature);
      const auto wc = wc_loss_and_grads(out.weights, out.codebook);
      axpy(step.grads, wc.grad_weights, cfg.beta_server);
      centroid_step(out.codebook, wc, cfg.lr_server * cfg.beta_server);
      out.weights = sgd_step(std::move(out.weights), step.grads, cfg.lr_server);
    }
  }
  out.wc_exit = wc_loss(out.weights, out.codebook);
  out.kld_to_entry = kld_loss({logits(theta, ood.inputs), logits(out.weights, ood.inputs), cfg.temperature});
  return out;
}

// ---------------------------------------------------------------------------
// Rounds

/// Every parameter rounded to float32, as a raw transmission delivers it.
inline ModelWeights to_float32(ModelWeights m) {
  for (auto& l : m.layers) {
    for (auto& w : l.weight.values()) w = static_cast<double>(static_cast<float>(w));
    for (auto& b : l.bias) b = static_cast<double>(static_cast<float>(b));
  }
  return m;
}

inline std::uint64_t raw_bytes(const ModelWeights& m) { return 4 * static_cast<std::uint64_t>(m.parameter_count()); }

/// A model as it crosses the wire: what the receiver reconstructs and what it cost.
struct Transmission {
  ModelWeights received;
  std::uint64_t bytes = 0;
  std::optional<ClusteredModel> clustered;
};

inline Transmission transmit_raw(const ModelWeights& m) { return {to_float32(m), raw_bytes(m), std::nullopt}; }

inline Transmission transmit_clustered(const ModelWeights& m, const Codebook& codebook) {
  const auto payload = encode(snap(m, codebook));
  auto decoded = decode(payload);
  auto received = decompress(decoded);
  return {std::move(received), payload.size(), std::move(decoded)};
}

struct RoundMetrics {
  std::size_t round = 0;
  std::size_t clusters = 0;  // C used this round; 0 when clustering is off
  double test_accuracy = 0.0;
  double pre_snap_accuracy = 0.0;
  double client_val_accuracy = 0.0;
  double score = 0.0;
  double wc_entry = 0.0;
  double wc_exit = 0.0;
  std::uint64_t upstream_bytes = 0;
  std::uint64_t downstream_bytes = 0;
  std::uint64_t cumulative_bytes = 0;
  double cumulative_ccr = 1.0;
  double mcr = 1.0;
  double wall_clock_seconds = 0.0;  // not part of any deterministic output
};

struct ServerState {
  ModelWeights global;
  Batch ood;
  ControllerState controller;
  TrainConfig train;
  FedConfig fed;
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::uint64_t dispatch_bytes = 0;  // cost of sending `global` to one client
  std::uint64_t cumulative_bytes = 0;
  std::uint64_t cumulative_raw_bytes = 0;
};

inline ServerState make_server(ModelWeights initial, Batch ood, const TrainConfig& train, const FedConfig& fed,
                               const ControllerState& controller, std::uint64_t seed) {
  validate(initial);
  train.validate();
  fed.validate();
  controller.validate();
  ServerState s;
  s.dispatch_bytes = raw_bytes(initial);
  s.global = to_float32(std::move(initial));
  s.ood = std::move(ood);
  s.controller = controller;
  s.train = train;
  s.fed = fed;
  s.seed = seed;
  return s;
}

/// K of M clients, uniformly without replacement, ascending ids.
inline std::vector<std::size_t> select_participants(std::size_t clients, std::size_t participants,
                                                    std::uint64_t seed, std::size_t round) {
  std::vector<std::size_t> ids(clients);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(derive_seed(seed, {0x9a27ULL, round}));
  rng.shuffle(ids);
  ids.resize(participants);
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Runs `task(i)` for i in [0, count) on up to `threads` workers. Results must
/// be written to per-index slots; the first exception is rethrown.
template <typename Task>
void parallel_for(std::size_t count, std::size_t threads, Task&& task) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::min(threads, count);
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// One federated round; advances `server` and returns the round's metrics.
inline RoundMetrics run_round(ServerState& server, std::span<const ClientState> clients, const Dataset& test) {
  const auto started = std::chrono::steady_clock::now();
  const Mode mode = server.fed.mode;
  if (clients.size() != server.fed.clients) {
    throw ContractViolation("server expects " + std::to_string(server.fed.clients) + " clients, got " +
                            std::to_string(clients.size()));
  }
  RoundMetrics m;
  m.round = ++server.round;
  const std::size_t clusters = mode == Mode::fedavg          ? 0
                               : mode == Mode::fixed_cluster ? server.fed.fixed_clusters
                                                             : server.controller.clusters;
  m.clusters = clusters;

  const auto ids = select_participants(server.fed.clients, server.fed.participants, server.seed, m.round);
  m.downstream_bytes = ids.size() * server.dispatch_bytes;

  std::vector<ClientResult> results(ids.size());
  parallel_for(ids.size(), server.fed.threads, [&](std::size_t i) {
    const auto& client = clients[ids[i]];
    results[i] = client_update(server.global, clusters, client, server.train,
                               derive_seed(server.seed, {0xc1e7ULL, m.round, client.id}));
  });

  std::vector<ModelWeights> received;
  std::vector<double> counts, scores;
  double val_acc = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& r = results[i];
    auto tx = clusters > 0 ? transmit_clustered(r.weights, *r.codebook) : transmit_raw(r.weights);
    m.upstream_bytes += tx.bytes;
    received.push_back(std::move(tx.received));
    counts.push_back(static_cast<double>(clients[ids[i]].sample_weight()));
    scores.push_back(r.score);
    val_acc += r.validation_accuracy;
  }
  m.client_val_accuracy = val_acc / static_cast<double>(ids.size());
  m.score = score_aggregate(scores, counts);
  ModelWeights aggregated = fedavg_aggregate(received, counts);

  if (mode == Mode::fedcompress) {
    auto scs = self_compress(aggregated, clusters, server.ood, server.train,
                             derive_seed(server.seed, {0x5c5ULL, m.round}));
    m.wc_entry = scs.wc_entry;
    m.wc_exit = scs.wc_exit;
    m.pre_snap_accuracy = accuracy(scs.weights, test.inputs, test.labels);
    auto tx = transmit_clustered(scs.weights, scs.codebook);
    server.global = std::move(tx.received);
    server.dispatch_bytes = tx.bytes;
  } else {
    auto tx = transmit_raw(aggregated);
    server.global = std::move(tx.received);
    server.dispatch_bytes = tx.bytes;
  }
  m.test_accuracy = accuracy(server.global, test.inputs, test.labels);
  if (mode != Mode::fedcompress) m.pre_snap_accuracy = m.test_accuracy;
  m.mcr = clusters > 0 ? model_compression_ratio(server.global, clusters) : 1.0;

  if (dynamic_clusters(mode)) server.controller = update_cluster_count(server.controller, m.score);

  const std::uint64_t raw = raw_bytes(server.global);
  server.cumulative_bytes += m.upstream_bytes + m.downstream_bytes;
  server.cumulative_raw_bytes += 2 * ids.size() * raw;
  m.cumulative_bytes = server.cumulative_bytes;
  m.cumulative_ccr = static_cast<double>(server.cumulative_raw_bytes) / static_cast<double>(server.cumulative_bytes);
  m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return m;
}

}  // namespace fedcompress
