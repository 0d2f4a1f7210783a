// SPDX-License-Identifier: Apache-2.0
#pragma once

// Temperature-scaled distillation loss.
//
//   L_kl = lam^2 * mean_x KL( softmax(t(x)/lam) || softmax(s(x)/lam) )
//
// Averaged over the batch so the server learning rate does not depend on the
// batch size.

#include <algorithm>
#include <cmath>
#include <string>

#include "fedcompress/error.hpp"
#include "fedcompress/matrix.hpp"
#include "fedcompress/nn.hpp"

namespace fedcompress {

/// Teacher and student logits on the same unlabeled inputs.
struct LogitsPair {
  Matrix teacher;
  Matrix student;
  double temperature = 3.0;
};

namespace detail {

inline void check_pair(const LogitsPair& pair) {
  if (pair.teacher.rows() != pair.student.rows() || pair.teacher.cols() != pair.student.cols()) {
    throw InvalidInput("teacher and student logits differ in shape");
  }
  if (pair.teacher.rows() == 0 || pair.teacher.cols() == 0) throw InvalidInput("empty logits");
  if (!(pair.temperature > 0.0)) throw InvalidInput("temperature must be positive");
}

/// log softmax(z / lam) for one row.
inline void log_softmax_row(std::span<const double> z, double lam, std::span<double> out) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp((v - mx) / lam);
  const double lse = std::log(sum);
  for (std::size_t c = 0; c < z.size(); ++c) out[c] = (z[c] - mx) / lam - lse;
}

}  // namespace detail

inline Matrix temp_softmax(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0)) throw InvalidInput("temperature must be positive");
  if (!logits.all_finite()) throw InvalidInput("logits contain non-finite values");
  return softmax_rows(logits, temperature);
}

inline double kld_loss(const LogitsPair& pair) {
  detail::check_pair(pair);
  const std::size_t k = pair.teacher.cols();
  std::vector<double> lt(k), ls(k);
  double total = 0.0;
  for (std::size_t r = 0; r < pair.teacher.rows(); ++r) {
    detail::log_softmax_row(pair.teacher.row(r), pair.temperature, lt);
    detail::log_softmax_row(pair.student.row(r), pair.temperature, ls);
    double kl = 0.0;
    for (std::size_t c = 0; c < k; ++c) kl += std::exp(lt[c]) * (lt[c] - ls[c]);
    total += kl;
  }
  // Rounding can leave a tiny negative value for identical distributions.
  return std::max(0.0, pair.temperature * pair.temperature * total / static_cast<double>(pair.teacher.rows()));
}

/// d L_kl / d student = lam * (softmax(s/lam) - softmax(t/lam)) / n.
inline Matrix kld_grad_student(const LogitsPair& pair) {
  detail::check_pair(pair);
  const Matrix pt = softmax_rows(pair.teacher, pair.temperature);
  Matrix g = softmax_rows(pair.student, pair.temperature);
  const double scale = pair.temperature / static_cast<double>(g.rows());
  auto gv = g.values();
  auto tv = pt.values();
  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = scale * (gv[i] - tv[i]);
  return g;
}

}  // namespace fedcompress
