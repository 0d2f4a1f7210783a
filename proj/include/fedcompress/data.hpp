// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic data: Gaussian blobs, non-IID client partitions and uniform-noise
// out-of-distribution sets. Everything is a pure function of (spec, seed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fedcompress/error.hpp"
#include "fedcompress/matrix.hpp"
#include "fedcompress/nn.hpp"
#include "fedcompress/random.hpp"

namespace fedcompress {

struct Dataset {
  Matrix inputs;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return inputs.rows(); }
  Batch batch() const { return Batch{inputs, labels}; }
};

/// Isotropic Gaussian clusters around centres drawn uniformly on a sphere of
/// radius `radius` centred at (offset, ..., offset). Class i % classes is
/// assigned to sample i before shuffling, so class counts differ by at most one.
inline Dataset make_blobs(std::size_t classes, std::size_t dim, std::size_t n, double spread, std::uint64_t seed,
                          double radius = 1.0, double offset = 0.0) {
  if (classes < 2) throw InvalidInput("make_blobs needs at least 2 classes");
  if (dim == 0) throw InvalidInput("make_blobs needs a positive dimension");
  if (n < classes) throw InvalidInput("make_blobs needs at least one sample per class");
  if (!(spread >= 0.0)) throw InvalidInput("spread must be non-negative");
  Rng rng(seed);
  Matrix centers(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    auto row = centers.row(c);
    double norm = 0.0;
    while (norm == 0.0) {
      norm = 0.0;
      for (auto& v : row) {
        v = rng.normal();
        norm += v * v;
      }
    }
    norm = std::sqrt(norm);
    for (auto& v : row) v = offset + v * radius / norm;
  }
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % classes;
  rng.shuffle(labels);
  Dataset ds{Matrix(n, dim), std::move(labels), classes, seed};
  for (std::size_t i = 0; i < n; ++i) {
    auto row = ds.inputs.row(i);
    auto center = centers.row(ds.labels[i]);
    for (std::size_t d = 0; d < dim; ++d) row[d] = center[d] + spread * rng.normal();
  }
  return ds;
}

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out{gather_rows(ds.inputs, indices), {}, ds.classes, ds.seed};
  for (auto i : indices) out.labels.push_back(ds.labels[i]);
  return out;
}

/// Random hold-out: returns {train, test}, the test part holding round(n * fraction) samples.
inline std::pair<Dataset, Dataset> split_holdout(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidInput("hold-out fraction must lie in (0, 1)");
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  const auto n_test = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  if (n_test == 0 || n_test >= ds.size()) throw InvalidInput("hold-out leaves an empty split");
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {subset(ds, train), subset(ds, test)};
}

struct PartitionSpec {
  std::size_t clients = 10;
  double size_cv = 0.25;            // coefficient of variation of client sizes
  double alpha = 1.0;               // Dirichlet concentration of per-client label mix
  double unlabeled_fraction = 0.2;  // share of each client's samples kept as D_u
  std::uint64_t seed = 0;
};

/// One simulated client. `unlabeled_truth` is never shown to training or
/// scoring; it only feeds the validation-accuracy report.
struct ClientState {
  std::size_t id = 0;
  Batch labeled;
  Matrix unlabeled;
  std::vector<std::size_t> unlabeled_truth;
  std::vector<std::size_t> labeled_index;    // rows of the source dataset
  std::vector<std::size_t> unlabeled_index;

  std::size_t sample_weight() const noexcept { return labeled.size(); }
};

/// Client sizes with the requested coefficient of variation, summing to `n`,
/// each at least `min_size`.
inline std::vector<std::size_t> draw_client_sizes(std::size_t n, std::size_t clients, double cv, Rng& rng,
                                                  std::size_t min_size = 2) {
  if (clients == 0) throw InvalidInput("partition needs at least one client");
  if (n < min_size * clients) {
    throw InvalidInput("cannot give " + std::to_string(clients) + " clients " + std::to_string(min_size) +
                       " samples each from " + std::to_string(n) + " samples");
  }
  std::vector<double> w(clients);
  double total = 0.0;
  for (auto& x : w) total += (x = std::max(0.05, 1.0 + cv * rng.normal()));
  std::vector<std::size_t> sizes(clients);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < clients; ++k) {
    const double exact = static_cast<double>(n) * w[k] / total;
    sizes[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += sizes[k];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++sizes[remainders[i % clients].second];
  for (std::size_t k = 0; k < clients; ++k) {
    while (sizes[k] < min_size) {
      auto largest = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      --sizes[largest];
      ++sizes[k];
    }
  }
  return sizes;
}

/// Disjoint, exhaustive split of `ds` into clients. Each client draws its label
/// mix from Dirichlet(alpha) and fills its quota one sample at a time from the
/// classes that still have samples left.
inline std::vector<ClientState> partition(const Dataset& ds, const PartitionSpec& spec) {
  if (spec.clients == 0) throw InvalidInput("partition needs at least one client");
  if (ds.size() < 2 * spec.clients) {
    throw InvalidInput("partition needs at least 2 samples per client: " + std::to_string(ds.size()) +
                       " samples for " + std::to_string(spec.clients) + " clients");
  }
  if (!(spec.size_cv >= 0.0)) throw InvalidInput("partition.size_cv must be non-negative");
  if (!(spec.alpha > 0.0)) throw InvalidInput("partition.alpha must be positive");
  if (!(spec.unlabeled_fraction >= 0.0 && spec.unlabeled_fraction < 1.0)) {
    throw InvalidInput("partition.unlabeled_fraction must lie in [0, 1)");
  }
  Rng rng(spec.seed);
  const auto sizes = draw_client_sizes(ds.size(), spec.clients, spec.size_cv, rng);

  std::vector<std::vector<std::size_t>> pools(ds.classes);
  for (std::size_t i = 0; i < ds.size(); ++i) pools.at(ds.labels[i]).push_back(i);
  for (auto& p : pools) rng.shuffle(p);
  std::vector<std::size_t> cursor(ds.classes, 0);

  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < spec.clients; ++k) {
    const auto mix = rng.dirichlet(ds.classes, spec.alpha);
    std::vector<std::size_t> mine;
    for (std::size_t t = 0; t < sizes[k]; ++t) {
      double mass = 0.0;
      for (std::size_t c = 0; c < ds.classes; ++c)
        if (cursor[c] < pools[c].size()) mass += mix[c];
      std::size_t pick = ds.classes;
      if (mass > 0.0) {
        double u = rng.uniform() * mass;
        for (std::size_t c = 0; c < ds.classes; ++c) {
          if (cursor[c] >= pools[c].size()) continue;
          pick = c;
          u -= mix[c];
          if (u < 0.0) break;
        }
      } else {
        // The client's preferred classes are exhausted: fall back to any class with samples left.
        for (std::size_t c = 0; c < ds.classes && pick == ds.classes; ++c)
          if (cursor[c] < pools[c].size()) pick = c;
      }
      mine.push_back(pools[pick][cursor[pick]++]);
    }
    rng.shuffle(mine);

    const auto n_k = mine.size();
    auto n_u = static_cast<std::size_t>(std::llround(spec.unlabeled_fraction * static_cast<double>(n_k)));
    n_u = std::clamp<std::size_t>(n_u, 1, n_k - 1);

    ClientState cs;
    cs.id = k;
    cs.unlabeled_index.assign(mine.begin(), mine.begin() + static_cast<std::ptrdiff_t>(n_u));
    cs.labeled_index.assign(mine.begin() + static_cast<std::ptrdiff_t>(n_u), mine.end());
    cs.labeled.inputs = gather_rows(ds.inputs, cs.labeled_index);
    std::vector<std::size_t> labels;
    for (auto i : cs.labeled_index) labels.push_back(ds.labels[i]);
    cs.labeled.labels = std::move(labels);
    cs.unlabeled = gather_rows(ds.inputs, cs.unlabeled_index);
    for (auto i : cs.unlabeled_index) cs.unlabeled_truth.push_back(ds.labels[i]);
    clients.push_back(std::move(cs));
  }
  return clients;
}

/// Smallest and largest coordinate over all inputs.
inline std::pair<double, double> coordinate_range(const Matrix& inputs) {
  auto v = inputs.values();
  if (v.empty()) throw InvalidInput("empty input matrix");
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

/// Unlabeled uniform noise over the hypercube [lo, hi]^dim.
inline Batch make_ood(std::size_t dim, std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  if (n == 0 || dim == 0) throw InvalidInput("OOD set needs positive size and dimension");
  if (!(hi > lo)) throw InvalidInput("OOD range must satisfy lo < hi");
  Rng rng(seed);
  Batch b{Matrix(n, dim), std::nullopt};
  for (auto& v : b.inputs.values()) v = rng.uniform(lo, hi);
  return b;
}

/// Reads "n,dim,classes" followed by n rows of dim features and an integer label.
inline Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open dataset file " + path);
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput(path + ": missing header line");
  for (auto& ch : line)
    if (ch == ',') ch = ' ';
  std::istringstream header(line);
  long long n = 0, dim = 0, classes = 0;
  if (!(header >> n >> dim >> classes) || n <= 0 || dim <= 0 || classes < 2) {
    throw InvalidInput(path + ": header must be 'n,dim,classes' with positive sizes and at least 2 classes");
  }
  Dataset ds{Matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(dim)), {}, static_cast<std::size_t>(classes),
             0};
  for (long long r = 0; r < n; ++r) {
    if (!std::getline(in, line)) throw InvalidInput(path + ": expected " + std::to_string(n) + " rows");
    for (auto& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream row(line);
    for (long long d = 0; d < dim; ++d) {
      if (!(row >> ds.inputs(static_cast<std::size_t>(r), static_cast<std::size_t>(d)))) {
        throw InvalidInput(path + ": row " + std::to_string(r + 1) + " has too few values");
      }
    }
    long long label = -1;
    if (!(row >> label) || label < 0 || label >= classes) {
      throw InvalidInput(path + ": row " + std::to_string(r + 1) + " has a missing or out-of-range label");
    }
    ds.labels.push_back(static_cast<std::size_t>(label));
  }
  if (!ds.inputs.all_finite()) throw InvalidInput(path + ": non-finite feature values");
  std::vector<bool> seen(ds.classes, false);
  for (auto l : ds.labels) seen[l] = true;
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw InvalidInput(path + ": every class needs at least one sample");
  }
  return ds;
}

}  // namespace fedcompress
