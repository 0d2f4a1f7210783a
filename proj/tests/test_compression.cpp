// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_support.hpp"

namespace fc = fedcompress;
using fc::testing::random_mlp;
using fc::testing::single_layer;

TEST(InitCentroids, TwoPointMasses) {
  const std::vector<double> w{0, 0, 1, 1};
  EXPECT_EQ(fc::init_centroids(w, 2, 1), (std::vector<double>{0, 1}));
}

TEST(InitCentroids, TwoGaussians) {
  fc::Rng rng(3);
  std::vector<double> w;
  for (int i = 0; i < 100; ++i) w.push_back((i % 2 ? 1.0 : -1.0) + 0.01 * rng.normal());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto c = fc::init_centroids(w, 2, seed);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_NEAR(c[0], -1.0, 0.05);
    EXPECT_NEAR(c[1], 1.0, 0.05);
  }
}

TEST(InitCentroids, SingleClusterIsMean) {
  const std::vector<double> w{0.3, -1.0, 2.5, 0.7, 0.1};
  const auto c = fc::init_centroids(w, 1, 9);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_NEAR(c[0], std::accumulate(w.begin(), w.end(), 0.0) / 5.0, 1e-12);
}

TEST(InitCentroids, FewerDistinctValuesArePadded) {
  const std::vector<double> w{0.0, 0.0, 1.0};
  const auto c = fc::init_centroids(w, 4, 1);
  ASSERT_EQ(c.size(), 4u);
  EXPECT_TRUE(std::is_sorted(c.begin(), c.end()));
  EXPECT_NE(std::find(c.begin(), c.end(), 0.0), c.end());
  EXPECT_NE(std::find(c.begin(), c.end(), 1.0), c.end());
  for (double v : c) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(InitCentroids, DeterministicGivenSeed) {
  fc::Rng rng(1);
  std::vector<double> w(300);
  for (auto& v : w) v = rng.normal();
  EXPECT_EQ(fc::init_centroids(w, 7, 5), fc::init_centroids(w, 7, 5));
}

TEST(Assign, NearestCentroid) {
  const std::vector<double> w{0, 0.4, 1.0};
  const std::vector<double> c{0, 1};
  EXPECT_EQ(fc::assign(w, c), (std::vector<std::uint32_t>{0, 0, 1}));
}

TEST(Assign, TieGoesToLowestIndex) {
  const std::vector<double> w{0.5};
  EXPECT_EQ(fc::assign(w, std::vector<double>{0, 1}), (std::vector<std::uint32_t>{0}));
  EXPECT_EQ(fc::assign(w, std::vector<double>{1, 0}), (std::vector<std::uint32_t>{0}));
}

TEST(Assign, WeightsEqualToPermutedCentroids) {
  const std::vector<double> c{0.5, -2.0, 3.0, 1.25};
  const std::vector<double> w{3.0, 0.5, 1.25, -2.0};
  const auto a = fc::assign(w, c);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(c[a[i]], w[i]);
}

TEST(Assign, PermutationEquivariant) {
  fc::Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> c(6), w(40);
    for (auto& v : c) v = rng.normal();
    for (auto& v : w) v = rng.normal();
    std::vector<std::uint32_t> perm(c.size());
    std::iota(perm.begin(), perm.end(), 0u);
    rng.shuffle(perm);
    std::vector<double> cp(c.size());
    for (std::size_t j = 0; j < c.size(); ++j) cp[perm[j]] = c[j];
    const auto a = fc::assign(w, c);
    const auto ap = fc::assign(w, cp);
    for (std::size_t i = 0; i < w.size(); ++i) {
      EXPECT_EQ(ap[i], perm[a[i]]);
      EXPECT_EQ(cp[ap[i]], c[a[i]]);
    }
  }
}

TEST(WcLoss, HandExample) {
  const auto m = single_layer(1, 3, {0, 0.4, 1.0});
  const fc::Codebook cb{{{0, 1}}};
  const auto r = fc::wc_loss_and_grads(m, cb);
  EXPECT_NEAR(r.loss, 0.16, 1e-15);
  const auto g = r.grad_weights.layers[0].weight.values();
  EXPECT_NEAR(g[0], 0.0, 1e-15);
  EXPECT_NEAR(g[1], 0.8, 1e-15);
  EXPECT_NEAR(g[2], 0.0, 1e-15);
  EXPECT_NEAR(r.grad_centroids.centroids[0][0], -0.8, 1e-15);
  EXPECT_NEAR(r.grad_centroids.centroids[0][1], 0.0, 1e-15);
}

TEST(WcLoss, PerfectlyClusteredIsZero) {
  const auto m = single_layer(2, 2, {1, 2, 2, 1}, {0.3, 0.4});
  const fc::Codebook cb{{{1, 2}}};
  const auto r = fc::wc_loss_and_grads(m, cb);
  EXPECT_EQ(r.loss, 0.0);
  for (double v : fc::flatten(r.grad_weights)) EXPECT_EQ(v, 0.0);
  for (double v : r.grad_centroids.centroids[0]) EXPECT_EQ(v, 0.0);
}

TEST(WcLoss, StructureMismatchIsContractViolation) {
  const auto m = random_mlp({3, 4, 2}, 1);
  const fc::Codebook cb{{{0, 1}}};
  EXPECT_THROW(fc::wc_loss(m, cb), fc::ContractViolation);
}

TEST(WcLoss, GradientsMatchFiniteDifferencesWithFixedAssignment) {
  for (int inst = 0; inst < 25; ++inst) {
    const auto m = random_mlp({5, 8, 4}, 300 + inst);
    const std::size_t clusters = 2 + inst % 6;
    // k-means centroids are a stationary point of the centroid gradient; move them off it.
    auto cb = fc::init_codebook(m, clusters, inst);
    fc::Rng rng(inst);
    for (auto& l : cb.centroids)
      for (auto& mu : l) mu += rng.uniform(-0.05, 0.05);
    const auto r = fc::wc_loss_and_grads(m, cb);
    const auto& a = r.assignment;

    const double err_w = fc::finite_diff_check(
        [&](const fc::ModelWeights& w) { return fc::wc_loss_fixed(w, cb, a); }, m, r.grad_weights);
    EXPECT_LT(err_w, 1e-4) << "weights, instance " << inst;

    std::vector<double> mu;
    for (const auto& l : cb.centroids) mu.insert(mu.end(), l.begin(), l.end());
    std::vector<double> gmu;
    for (const auto& l : r.grad_centroids.centroids) gmu.insert(gmu.end(), l.begin(), l.end());
    const double err_mu = fc::finite_diff_check(
        [&](const std::vector<double>& v) {
          fc::Codebook c = cb;
          std::size_t k = 0;
          for (auto& l : c.centroids)
            for (auto& x : l) x = v[k++];
          return fc::wc_loss_fixed(m, c, a);
        },
        mu, gmu);
    EXPECT_LT(err_mu, 1e-4) << "centroids, instance " << inst;
  }
}

TEST(WcLoss, SmallStepNeverIncreasesLossWithFixedAssignment) {
  for (int inst = 0; inst < 30; ++inst) {
    auto m = random_mlp({6, 7, 3}, 50 + inst);
    auto cb = fc::init_codebook(m, 3 + inst % 5, inst);
    const auto r = fc::wc_loss_and_grads(m, cb);
    const double lr = 1e-3;
    auto m2 = fc::sgd_step(m, r.grad_weights, lr);
    auto cb2 = cb;
    for (std::size_t l = 0; l < cb.centroids.size(); ++l)
      for (std::size_t j = 0; j < cb.centroids[l].size(); ++j)
        cb2.centroids[l][j] -= lr * r.grad_centroids.centroids[l][j];
    EXPECT_LE(fc::wc_loss_fixed(m2, cb2, r.assignment), r.loss);
  }
}

TEST(CentroidStep, MovesCentroidTowardMembers) {
  const auto m = single_layer(1, 3, {0, 0.4, 1.0});
  fc::Codebook cb{{{0, 1}}};
  const auto r = fc::wc_loss_and_grads(m, cb);
  fc::centroid_step(cb, r, 0.5);
  // cluster 0 holds {0, 0.4}: gradient -0.8 over 2 members, step 0.5 -> +0.2.
  EXPECT_NEAR(cb.centroids[0][0], 0.2, 1e-15);
  EXPECT_EQ(cb.centroids[0][1], 1.0);
}

TEST(Snap, NearestSnap) {
  const auto m = single_layer(1, 2, {0.1, 0.9});
  const auto s = fc::decompress(fc::snap(m, fc::Codebook{{{0, 1}}}));
  EXPECT_EQ(s.layers[0].weight.values()[0], 0.0);
  EXPECT_EQ(s.layers[0].weight.values()[1], 1.0);
}

TEST(Snap, AlreadyClusteredIsUnchanged) {
  const auto m = single_layer(2, 2, {0.5, -0.25, -0.25, 0.5}, {0.125, 1.0});
  const auto s = fc::decompress(fc::snap(m, fc::Codebook{{{-0.25, 0.5}}}));
  EXPECT_EQ(s, m);
}

TEST(Snap, IdempotentAndZeroLoss) {
  for (int inst = 0; inst < 20; ++inst) {
    const auto m = random_mlp({6, 9, 4}, 900 + inst);
    const auto cb = fc::init_codebook(m, 2 + inst % 10, inst);
    const auto once = fc::snap(m, cb);
    const auto dense = fc::decompress(once);
    const auto twice = fc::snap(dense, fc::codebook_of(once));
    EXPECT_EQ(twice, once);
    EXPECT_EQ(fc::decompress(twice), dense);
    EXPECT_EQ(fc::wc_loss(dense, fc::codebook_of(once)), 0.0);
    EXPECT_LE(fc::max_distinct_per_layer(dense), cb.cluster_count());
  }
}

TEST(Snap, PermutedCodebookGivesSameWeights) {
  const auto m = random_mlp({4, 5, 3}, 12);
  auto cb = fc::init_codebook(m, 5, 3);
  auto rev = cb;
  for (auto& l : rev.centroids) std::reverse(l.begin(), l.end());
  EXPECT_EQ(fc::decompress(fc::snap(m, cb)), fc::decompress(fc::snap(m, rev)));
}

TEST(GrowCodebook, KeepsExistingCentroidsAndSplitsLargestGaps) {
  const fc::Codebook cb{{{0.0, 1.0, 4.0}}};
  const auto grown = fc::grow_codebook(cb, 5);
  EXPECT_EQ(grown.centroids[0], (std::vector<double>{0.0, 1.0, 1.75, 2.5, 4.0}));
}
