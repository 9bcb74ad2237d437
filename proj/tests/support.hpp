#pragma once

// Small helpers shared by the unit tests. Oracles here avoid Eigen on purpose.

#include "tmlesi/core_data.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace testsupport {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

/// Gaussian elimination with partial pivoting; solves a x = b.
inline Vec solve(Mat a, Vec b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    std::swap(a[c], a[p]);
    std::swap(b[c], b[p]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  Vec x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

/// Random sample with one or two covariates and confounded exposure.
inline tmlesi::Sample random_sample(std::mt19937_64& rng, int n, int d = 1) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  Eigen::MatrixXd w(n, d);
  Eigen::VectorXd a(n), y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) w(i, j) = z(rng);
    a[i] = u(rng) < 1.0 / (1.0 + std::exp(-0.7 * w(i, 0))) ? 1.0 : 0.0;
    y[i] = 0.5 * w(i, 0) + a[i] * (1.0 + 0.5 * w(i, 0)) + z(rng);
  }
  if (a.sum() == 0.0) a[0] = 1.0;
  if (a.sum() == n) a[0] = 0.0;
  std::vector<std::string> names;
  for (int j = 0; j < d; ++j) names.push_back(d == 1 ? "w" : "w" + std::to_string(j + 1));
  return tmlesi::make_sample(names, w, a, y);
}

}  // namespace testsupport
