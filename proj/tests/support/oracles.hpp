// Copyright 2026 The reglat Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Independent reference computations used as test oracles.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "reglat/warp.hpp"

namespace reglat::testing {

inline double det3(const double m[3][3]) {
  return m[0][0] * m[1][1] * m[2][2] + m[0][1] * m[1][2] * m[2][0] + m[0][2] * m[1][0] * m[2][1] -
         m[0][2] * m[1][1] * m[2][0] - m[0][0] * m[1][2] * m[2][1] - m[0][1] * m[1][0] * m[2][2];
}

/// det of d(phi_c)/d(axis a) at an interior voxel, central differences.
inline double central_difference_det(const DeformationGrid<double>& g, std::int64_t z,
                                     std::int64_t y, std::int64_t x) {
  const Dims d = g.dims();
  const std::int64_t p[3] = {z, y, x};
  double m[3][3];
  for (int c = 0; c < 3; ++c)
    for (int a = 0; a < 3; ++a) {
      std::int64_t hi[3] = {p[0], p[1], p[2]}, lo[3] = {p[0], p[1], p[2]};
      ++hi[a];
      --lo[a];
      const auto base = static_cast<std::size_t>(c) * d.count();
      m[c][a] = 0.5 * (g.phi[base + d.index(hi[0], hi[1], hi[2])] -
                       g.phi[base + d.index(lo[0], lo[1], lo[2])]);
    }
  return det3(m);
}

/// 5^3 grid: identity with the x coordinate reversed around the centre line
/// (z = y = 2) plus a smooth off-diagonal coupling.
inline DeformationGrid<double> folded_field_5() {
  const Dims d{5, 5, 5};
  auto g = DeformationGrid<double>::identity(d);
  const std::size_t n = d.count();
  const double line[5] = {0, 1, 0, -1, 0};
  for (std::int64_t z = 0; z < 5; ++z)
    for (std::int64_t y = 0; y < 5; ++y)
      for (std::int64_t x = 0; x < 5; ++x) {
        const std::size_t i = d.index(z, y, x);
        if (std::abs(z - 2) <= 1 && y == 2) g.phi[2 * n + i] = line[x];
        g.phi[n + i] += 0.1 * std::sin(double(x + z));
        g.phi[i] += 0.05 * std::cos(double(x * y));
      }
  return g;
}

/// Eigen-decomposition of a symmetric matrix (row-major n x n) by cyclic
/// Jacobi rotations. Eigenvalues descending; vectors[k] is the k-th
/// eigenvector, its largest-magnitude entry made positive.
struct SymmetricEigen {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
};

inline SymmetricEigen jacobi_eigen(std::vector<double> a, int n) {
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto at = [&](int r, int c) -> double& { return a[static_cast<std::size_t>(r) * n + c]; };
  double total = 0;
  for (double x : a) total += x * x;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += 2 * at(p, q) * at(p, q);
    if (off <= 1e-30 * total) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double& vkp = v[static_cast<std::size_t>(k) * n + p];
          double& vkq = v[static_cast<std::size_t>(k) * n + q];
          const double x = vkp, y = vkq;
          vkp = c * x - s * y;
          vkq = s * x + c * y;
        }
      }
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) { return at(i, i) > at(j, j); });
  SymmetricEigen e;
  for (int k : order) {
    e.values.push_back(at(k, k));
    std::vector<double> col(n);
    for (int r = 0; r < n; ++r) col[r] = v[static_cast<std::size_t>(r) * n + k];
    const auto big = std::max_element(col.begin(), col.end(),
                                      [](double x, double y) { return std::abs(x) < std::abs(y); });
    if (*big < 0)
      for (double& x : col) x = -x;
    e.vectors.push_back(std::move(col));
  }
  return e;
}

}  // namespace reglat::testing
