// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

namespace fc = fedcompress;
using fc::testing::random_matrix;

TEST(TempSoftmax, ZeroLogitsAreUniform) {
  for (double lam : {0.1, 1.0, 3.0, 50.0}) {
    const auto p = fc::temp_softmax(fc::Matrix(1, 3, 0.0), lam);
    for (double v : p.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  }
}

TEST(TempSoftmax, ClosedForm) {
  const auto p = fc::temp_softmax(fc::Matrix(1, 2, std::vector<double>{std::log(3.0), 0.0}), 1.0);
  EXPECT_NEAR(p(0, 0), 0.75, 1e-15);
  EXPECT_NEAR(p(0, 1), 0.25, 1e-15);
}

TEST(TempSoftmax, LargeTemperatureApproachesUniform) {
  fc::Rng rng(1);
  const auto z = random_matrix(5, 6, rng, 10.0);
  const auto p = fc::temp_softmax(z, 1e4);
  for (double v : p.values()) EXPECT_LT(v - 1.0 / 6.0, 0.01);
}

TEST(TempSoftmax, RejectsBadInput) {
  EXPECT_THROW(fc::temp_softmax(fc::Matrix(1, 2), 0.0), fc::InvalidInput);
  fc::Matrix z(1, 2);
  z(0, 1) = std::nan("");
  EXPECT_THROW(fc::temp_softmax(z, 1.0), fc::InvalidInput);
}

TEST(Kld, HandExample) {
  const fc::LogitsPair pair{fc::Matrix(1, 2, std::vector<double>{std::log(3.0), 0.0}), fc::Matrix(1, 2, 0.0), 1.0};
  const double expected = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  EXPECT_NEAR(fc::kld_loss(pair), expected, 1e-12);
  EXPECT_NEAR(fc::kld_loss(pair), 0.130812, 1e-6);
}

TEST(Kld, IdenticalDistributionsGiveZero) {
  fc::Rng rng(2);
  const auto z = random_matrix(4, 5, rng);
  EXPECT_EQ(fc::kld_loss({z, z, 3.0}), 0.0);
}

TEST(Kld, NonNegative) {
  fc::Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    EXPECT_GE(fc::kld_loss({random_matrix(3, 4, rng, 3.0), random_matrix(3, 4, rng, 3.0), 0.5 + t * 0.1}), 0.0);
  }
}

TEST(Kld, TemperatureScalingIdentity) {
  fc::Rng rng(4);
  for (int t = 0; t < 30; ++t) {
    const auto a = random_matrix(3, 5, rng, 2.0);
    const auto b = random_matrix(3, 5, rng, 2.0);
    const double lam = 0.5 + 0.25 * t;
    fc::Matrix as = a, bs = b;
    for (auto& v : as.values()) v /= lam;
    for (auto& v : bs.values()) v /= lam;
    EXPECT_NEAR(fc::kld_loss({a, b, lam}), lam * lam * fc::kld_loss({as, bs, 1.0}), 1e-9);
  }
}

TEST(Kld, ShapeMismatchRejected) {
  EXPECT_THROW(fc::kld_loss({fc::Matrix(2, 3), fc::Matrix(2, 4), 1.0}), fc::InvalidInput);
}

TEST(Kld, GradientRowsSumToZero) {
  fc::Rng rng(5);
  const auto g = fc::kld_grad_student({random_matrix(6, 4, rng), random_matrix(6, 4, rng), 3.0});
  for (std::size_t r = 0; r < g.rows(); ++r) {
    double s = 0.0;
    for (double v : g.row(r)) s += v;
    EXPECT_NEAR(s, 0.0, 1e-15);
  }
}

TEST(Kld, LogitGradientMatchesFiniteDifferences) {
  fc::Rng rng(6);
  for (int inst = 0; inst < 25; ++inst) {
    const auto t = random_matrix(5, 4, rng, 2.0);
    const auto s = random_matrix(5, 4, rng, 2.0);
    const double lam = 1.0 + inst % 5;
    const auto g = fc::kld_grad_student({t, s, lam});
    const std::vector<double> sv(s.values().begin(), s.values().end());
    const std::vector<double> gv(g.values().begin(), g.values().end());
    const double err = fc::finite_diff_check(
        [&](const std::vector<double>& v) { return fc::kld_loss({t, fc::Matrix(5, 4, v), lam}); }, sv, gv);
    EXPECT_LT(err, 1e-4) << "instance " << inst;
  }
}

TEST(Kld, NetworkGradientMatchesFiniteDifferences) {
  fc::Rng rng(7);
  for (int inst = 0; inst < 25; ++inst) {
    const auto student = fc::testing::random_mlp({4, 7, 5, 3}, 500 + inst);
    const auto teacher = fc::testing::random_mlp({4, 7, 5, 3}, 700 + inst);
    const auto x = random_matrix(6, 4, rng);
    const double lam = 3.0;
    const auto g = fc::distill_grads(student, teacher, x, lam).grads;
    const auto tz = fc::logits(teacher, x);
    const double err = fc::finite_diff_check(
        [&](const fc::ModelWeights& w) { return fc::kld_loss({tz, fc::logits(w, x), lam}); }, student, g);
    EXPECT_LT(err, 1e-4) << "instance " << inst;
  }
}
