// SPDX-License-Identifier: Apache-2.0
#pragma once

// Effective-rank representation score of penultimate-layer embeddings:
//
//   r_j = sigma_j / ||sigma||_1 + 1e-7,   E = exp(-sum_j r_j log r_j)
//
// Singular values come from the eigenvalues of the smaller Gram matrix
// (Z^T Z or Z Z^T) via cyclic Jacobi rotations.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fedcompress/error.hpp"
#include "fedcompress/matrix.hpp"
#include "fedcompress/nn.hpp"

namespace fedcompress {

inline constexpr double kRankEpsilon = 1e-7;

struct ScoreReport {
  std::vector<double> singular_values;  // descending
  std::vector<double> ratios;
  double score = 0.0;
};

/// Eigenvalues of a symmetric matrix by cyclic Jacobi; stops once the
/// off-diagonal Frobenius norm falls below tol * ||A||_F.
inline std::vector<double> jacobi_eigenvalues(Matrix a, double tol = 1e-10, int max_sweeps = 100) {
  const std::size_t n = a.rows();
  if (n != a.cols()) throw InvalidInput("jacobi_eigenvalues needs a square matrix");
  double frob = 0.0;
  for (double v : a.values()) frob += v * v;
  frob = std::sqrt(frob);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
    if (std::sqrt(off) <= tol * frob || frob == 0.0) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  return eig;
}

/// min(n, h) singular values of Z, descending.
inline std::vector<double> singular_values(const Matrix& z) {
  if (z.rows() == 0 || z.cols() == 0) throw InvalidInput("embedding matrix is empty");
  if (!z.all_finite()) throw InvalidInput("embedding matrix contains non-finite values");
  const bool tall = z.rows() >= z.cols();
  const std::size_t m = tall ? z.cols() : z.rows();
  Matrix gram(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m; ++j) {
      double acc = 0.0;
      if (tall) {
        for (std::size_t r = 0; r < z.rows(); ++r) acc += z(r, i) * z(r, j);
      } else {
        for (std::size_t c = 0; c < z.cols(); ++c) acc += z(i, c) * z(j, c);
      }
      gram(i, j) = gram(j, i) = acc;
    }
  }
  auto eig = jacobi_eigenvalues(std::move(gram));
  for (auto& e : eig) e = std::sqrt(std::max(0.0, e));
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

inline ScoreReport effective_rank_report(std::vector<double> sigma) {
  if (sigma.empty()) throw InvalidInput("no singular values");
  double l1 = 0.0;
  for (double s : sigma) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidInput("singular values must be finite and non-negative");
    l1 += s;
  }
  if (l1 == 0.0) throw DegenerateEmbedding("all singular values are zero");
  ScoreReport rep;
  double entropy = 0.0;
  for (double s : sigma) {
    const double r = s / l1 + kRankEpsilon;
    rep.ratios.push_back(r);
    entropy -= r * std::log(r);
  }
  rep.score = std::exp(entropy);
  rep.singular_values = std::move(sigma);
  return rep;
}

inline double effective_rank_score(std::span<const double> sigma) {
  return effective_rank_report(std::vector<double>(sigma.begin(), sigma.end())).score;
}

inline double embedding_score(const Matrix& z) { return effective_rank_report(singular_values(z)).score; }

/// Score of `model` on a client's unlabeled set, taken as one full batch.
inline double client_score(const ModelWeights& model, const Matrix& unlabeled) {
  return embedding_score(penultimate_embeddings(model, unlabeled));
}

inline double client_score(const ModelWeights& model, const Batch& unlabeled) {
  return client_score(model, unlabeled.inputs);
}

}  // namespace fedcompress
