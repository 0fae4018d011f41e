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

#pragma once

#include <cmath>
#include <cstdint>

#include "reglat/core/tensor.hpp"

namespace reglat::sampling {

/// Interpolation stencil along one axis with border clamping. A clamped
/// coordinate has zero derivative.
template <class T>
struct AxisTap {
  std::int64_t i0 = 0, i1 = 0;
  T frac = 0;
  bool clamped = true;
};

template <class T>
inline AxisTap<T> axis_tap(T c, std::int64_t n) {
  if (n == 1) return {0, 0, T(0), true};
  if (!(c > T(0))) return {0, 1, T(0), true};
  const T hi = static_cast<T>(n - 1);
  if (!(c < hi)) return {n - 2, n - 1, T(1), true};
  const T fl = std::floor(c);
  auto i0 = static_cast<std::int64_t>(fl);
  if (i0 > n - 2) i0 = n - 2;
  return {i0, i0 + 1, c - static_cast<T>(i0), false};
}

/// Trilinear sample of a (D, H, W) channel at (z, y, x).
template <class T>
inline T trilinear(const T* vol, const Dims& d, T z, T y, T x) {
  const auto tz = axis_tap(z, d.d), ty = axis_tap(y, d.h), tx = axis_tap(x, d.w);
  const T wz[2] = {T(1) - tz.frac, tz.frac};
  const T wy[2] = {T(1) - ty.frac, ty.frac};
  const T wx[2] = {T(1) - tx.frac, tx.frac};
  const std::int64_t iz[2] = {tz.i0, tz.i1}, iy[2] = {ty.i0, ty.i1}, ix[2] = {tx.i0, tx.i1};
  T acc = 0;
  for (int a = 0; a < 2; ++a) {
    if (wz[a] == T(0)) continue;
    for (int b = 0; b < 2; ++b) {
      if (wy[b] == T(0)) continue;
      const T wab = wz[a] * wy[b];
      const T* row = vol + (iz[a] * d.h + iy[b]) * d.w;
      T line = 0;
      if (wx[0] != T(0)) line += wx[0] * row[ix[0]];
      if (wx[1] != T(0)) line += wx[1] * row[ix[1]];
      acc += wab * line;
    }
  }
  return acc;
}

}  // namespace reglat::sampling
