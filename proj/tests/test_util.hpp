// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "defas/nn.hpp"
#include "defas/rng.hpp"
#include "defas/tape.hpp"

namespace defas::testutil {

inline Mat random_mat(Rng& rng, int rows, int cols, double scale = 1.0) {
  Mat m(rows, cols);
  rng.fill_normal(m.data(), static_cast<size_t>(m.size()));
  return m * scale;
}

/// Central-difference gradient of a scalar-valued function of one parameter
/// tensor, holding everything else fixed.
inline Mat numeric_grad(ParamStore& params, const std::string& name,
                        const std::function<double()>& loss_value, double eps = 1e-5) {
  Mat& p = params.get(name);
  Mat g(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      double keep = p(i, j);
      p(i, j) = keep + eps;
      double up = loss_value();
      p(i, j) = keep - eps;
      double down = loss_value();
      p(i, j) = keep;
      g(i, j) = (up - down) / (2.0 * eps);
    }
  }
  return g;
}

/// max_ij |a-b| / max(1, |a|_inf, |b|_inf)
inline double rel_inf_diff(const Mat& a, const Mat& b) {
  double scale = std::max({1.0, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace defas::testutil
