// SPDX-License-Identifier: Apache-2.0
#pragma once

// Weight clustering: per-layer codebooks with one shared cluster count C,
// nearest-centroid assignment, the clustering penalty
//
//   L_wc = sum_i (theta_i - mu_{a(i)})^2
//
// and its gradients, and hard snapping to the codebook. Only weight matrices
// are clustered; biases stay as (float32) values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fedcompress/error.hpp"
#include "fedcompress/nn.hpp"
#include "fedcompress/random.hpp"

namespace fedcompress {

struct Codebook {
  std::vector<std::vector<double>> centroids;  // one list per layer, each of cluster_count() entries

  std::size_t cluster_count() const { return centroids.empty() ? 0 : centroids.front().size(); }
  std::size_t layer_count() const { return centroids.size(); }
  friend bool operator==(const Codebook&, const Codebook&) = default;
};

struct Assignment {
  std::vector<std::vector<std::uint32_t>> indices;  // per layer, one entry per weight (row-major)
  friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// One clustered layer: float32 codebook, one index per weight, float32 biases.
struct ClusteredLayer {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> codebook;
  std::vector<std::uint32_t> indices;
  std::vector<float> bias;
  friend bool operator==(const ClusteredLayer&, const ClusteredLayer&) = default;
};

struct ClusteredModel {
  std::vector<ClusteredLayer> layers;
  std::vector<Activation> activations;

  std::size_t cluster_count() const { return layers.empty() ? 0 : layers.front().codebook.size(); }
  friend bool operator==(const ClusteredModel&, const ClusteredModel&) = default;
};

namespace detail {

inline std::size_t nearest(double w, std::span<const double> centroids) {
  std::size_t best = 0;
  double best_d = (w - centroids[0]) * (w - centroids[0]);
  for (std::size_t j = 1; j < centroids.size(); ++j) {
    const double d = (w - centroids[j]) * (w - centroids[j]);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

inline std::vector<double> distinct_sorted(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

inline void check_codebook(const ModelWeights& model, const Codebook& codebook) {
  if (codebook.layer_count() != model.layers.size()) {
    throw ContractViolation("codebook has " + std::to_string(codebook.layer_count()) + " layers, model has " +
                            std::to_string(model.layers.size()));
  }
  const std::size_t c = codebook.cluster_count();
  if (c == 0) throw ContractViolation("codebook is empty");
  for (const auto& layer : codebook.centroids)
    if (layer.size() != c) throw ContractViolation("codebook layers disagree on the cluster count");
}

}  // namespace detail

/// 1-D k-means (k-means++ seeding, at most 50 Lloyd iterations, shift tolerance 1e-6).
/// Returns `clusters` centroids sorted ascending. A layer with fewer distinct values
/// than `clusters` gets its distinct values padded with evenly spaced points over
/// [min, max].
inline std::vector<double> init_centroids(std::span<const double> values, std::size_t clusters, std::uint64_t seed) {
  if (clusters == 0) throw InvalidInput("cluster count must be positive");
  if (values.empty()) throw InvalidInput("cannot cluster an empty layer");
  for (double v : values)
    if (!std::isfinite(v)) throw InvalidInput("layer contains non-finite weights");

  const auto distinct = detail::distinct_sorted(values);
  if (distinct.size() < clusters) {
    std::vector<double> out = distinct;
    double lo = distinct.front();
    double hi = distinct.back();
    if (hi == lo) {
      lo -= 0.5;
      hi += 0.5;
    }
    for (std::size_t k = 0; k < clusters && out.size() < clusters; ++k) {
      const double p = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(clusters - 1);
      if (!std::binary_search(distinct.begin(), distinct.end(), p)) out.push_back(p);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  Rng rng(seed);
  std::vector<double> centroids;
  centroids.reserve(clusters);
  centroids.push_back(values[rng.below(values.size())]);
  std::vector<double> d2(values.size());
  while (centroids.size() < clusters) {
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centroids) best = std::min(best, (values[i] - c) * (values[i] - c));
      total += (d2[i] = best);
    }
    double target = rng.uniform() * total;
    std::size_t pick = values.size();
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (d2[i] <= 0.0) continue;
      pick = i;
      target -= d2[i];
      if (target < 0.0) break;
    }
    centroids.push_back(values[pick]);
  }
  std::sort(centroids.begin(), centroids.end());

  std::vector<double> sum(clusters);
  std::vector<std::size_t> count(clusters);
  for (int iter = 0; iter < 50; ++iter) {
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    for (double v : values) {
      const auto j = detail::nearest(v, centroids);
      sum[j] += v;
      ++count[j];
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < clusters; ++j) {
      if (count[j] == 0) continue;
      const double next = sum[j] / static_cast<double>(count[j]);
      shift = std::max(shift, std::abs(next - centroids[j]));
      centroids[j] = next;
    }
    if (shift < 1e-6) break;
  }
  std::sort(centroids.begin(), centroids.end());
  return centroids;
}

/// k-means codebook over every weight matrix of `model`, seeded per layer.
inline Codebook init_codebook(const ModelWeights& model, std::size_t clusters, std::uint64_t seed) {
  Codebook cb;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    cb.centroids.push_back(init_centroids(model.layers[l].weight.values(), clusters, derive_seed(seed, {l})));
  }
  return cb;
}

/// Raises the cluster count to `clusters`, keeping existing centroids and inserting
/// new ones at the midpoints of the largest gaps.
inline Codebook grow_codebook(Codebook codebook, std::size_t clusters) {
  for (auto& layer : codebook.centroids) {
    if (layer.empty()) throw ContractViolation("cannot grow an empty codebook layer");
    std::sort(layer.begin(), layer.end());
    while (layer.size() < clusters) {
      if (layer.size() == 1) {
        layer.push_back(layer.front() + std::max(1e-3, 1e-3 * std::abs(layer.front())));
        continue;
      }
      std::size_t gap = 0;
      for (std::size_t j = 1; j + 1 < layer.size(); ++j)
        if (layer[j + 1] - layer[j] > layer[gap + 1] - layer[gap]) gap = j;
      layer.insert(layer.begin() + static_cast<std::ptrdiff_t>(gap + 1), 0.5 * (layer[gap] + layer[gap + 1]));
    }
  }
  return codebook;
}

/// Nearest centroid per weight; ties go to the lowest index.
inline std::vector<std::uint32_t> assign(std::span<const double> weights, std::span<const double> centroids) {
  if (centroids.empty()) throw InvalidInput("assign needs at least one centroid");
  std::vector<std::uint32_t> idx(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i)
    idx[i] = static_cast<std::uint32_t>(detail::nearest(weights[i], centroids));
  return idx;
}

inline Assignment assign(const ModelWeights& model, const Codebook& codebook) {
  detail::check_codebook(model, codebook);
  Assignment a;
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    a.indices.push_back(assign(model.layers[l].weight.values(), codebook.centroids[l]));
  return a;
}

struct WcLossAndGrads {
  double loss = 0.0;
  ModelWeights grad_weights;  // bias entries are zero
  Codebook grad_centroids;
  Assignment assignment;
};

/// L_wc with the given (held fixed) assignment.
inline double wc_loss_fixed(const ModelWeights& model, const Codebook& codebook, const Assignment& assignment) {
  detail::check_codebook(model, codebook);
  double loss = 0.0;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto w = model.layers[l].weight.values();
    const auto& mu = codebook.centroids[l];
    const auto& a = assignment.indices.at(l);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = w[i] - mu[a[i]];
      loss += d * d;
    }
  }
  return loss;
}

inline double wc_loss(const ModelWeights& model, const Codebook& codebook) {
  return wc_loss_fixed(model, codebook, assign(model, codebook));
}

/// Loss and gradients with assignments recomputed from the current values:
/// dL/dtheta_i = 2(theta_i - mu_a(i)), dL/dmu_j = -2 sum_{a(i)=j} (theta_i - mu_j).
inline WcLossAndGrads wc_loss_and_grads(const ModelWeights& model, const Codebook& codebook) {
  WcLossAndGrads out;
  out.assignment = assign(model, codebook);
  out.grad_weights = zeros_like(model);
  out.grad_centroids = codebook;
  for (auto& layer : out.grad_centroids.centroids) std::fill(layer.begin(), layer.end(), 0.0);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto w = model.layers[l].weight.values();
    auto gw = out.grad_weights.layers[l].weight.values();
    auto& gmu = out.grad_centroids.centroids[l];
    const auto& mu = codebook.centroids[l];
    const auto& a = out.assignment.indices[l];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = w[i] - mu[a[i]];
      out.loss += d * d;
      gw[i] = 2.0 * d;
      gmu[a[i]] -= 2.0 * d;
    }
  }
  return out;
}

/// Cluster occupancy per layer and centroid.
inline std::vector<std::vector<std::size_t>> cluster_sizes(const Assignment& assignment, std::size_t clusters) {
  std::vector<std::vector<std::size_t>> sizes;
  for (const auto& layer : assignment.indices) {
    std::vector<std::size_t> n(clusters, 0);
    for (auto j : layer) ++n[j];
    sizes.push_back(std::move(n));
  }
  return sizes;
}

/// Centroid update used by the training loops: the centroid gradient divided by
/// the cluster occupancy, i.e. mu_j += 2 * step * (mean_j - mu_j). The raw summed
/// gradient is unstable for clusters holding hundreds of weights.
inline void centroid_step(Codebook& codebook, const WcLossAndGrads& wc, double step) {
  const auto sizes = cluster_sizes(wc.assignment, codebook.cluster_count());
  for (std::size_t l = 0; l < codebook.centroids.size(); ++l) {
    for (std::size_t j = 0; j < codebook.centroids[l].size(); ++j) {
      if (sizes[l][j] == 0) continue;
      codebook.centroids[l][j] -= step * wc.grad_centroids.centroids[l][j] / static_cast<double>(sizes[l][j]);
    }
  }
}

/// Hard quantisation: centroids and biases are rounded to float32, then every
/// weight is replaced by the index of its nearest rounded centroid.
inline ClusteredModel snap(const ModelWeights& model, const Codebook& codebook) {
  detail::check_codebook(model, codebook);
  ClusteredModel out;
  out.activations = model.activations;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    ClusteredLayer cl;
    cl.rows = static_cast<std::uint32_t>(layer.weight.rows());
    cl.cols = static_cast<std::uint32_t>(layer.weight.cols());
    std::vector<double> rounded;
    for (double c : codebook.centroids[l]) {
      cl.codebook.push_back(static_cast<float>(c));
      rounded.push_back(static_cast<double>(cl.codebook.back()));
    }
    cl.indices = assign(layer.weight.values(), rounded);
    for (double b : layer.bias) cl.bias.push_back(static_cast<float>(b));
    out.layers.push_back(std::move(cl));
  }
  return out;
}

/// Dense weights of a clustered model: every weight equals its centroid.
inline ModelWeights decompress(const ClusteredModel& clustered) {
  ModelWeights m;
  m.activations = clustered.activations;
  for (const auto& cl : clustered.layers) {
    DenseLayer layer{Matrix(cl.rows, cl.cols), {}};
    auto w = layer.weight.values();
    if (cl.indices.size() != w.size()) throw ContractViolation("index count does not match layer shape");
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(cl.codebook.at(cl.indices[i]));
    for (float b : cl.bias) layer.bias.push_back(static_cast<double>(b));
    m.layers.push_back(std::move(layer));
  }
  return m;
}

/// The codebook carried by a clustered model, widened to double.
inline Codebook codebook_of(const ClusteredModel& clustered) {
  Codebook cb;
  for (const auto& cl : clustered.layers) cb.centroids.emplace_back(cl.codebook.begin(), cl.codebook.end());
  return cb;
}

/// Largest number of distinct weight values found in any single layer.
inline std::size_t max_distinct_per_layer(const ModelWeights& model) {
  std::size_t best = 0;
  for (const auto& l : model.layers) best = std::max(best, detail::distinct_sorted(l.weight.values()).size());
  return best;
}

}  // namespace fedcompress
