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

// Small networks and subjects for tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "reglat/core/rng.hpp"
#include "reglat/regnet.hpp"

namespace reglat::testing {

/// 8^3 input, base 2 channels, one downsampling.
inline ArchConfig mini_arch() {
  ArchConfig a;
  a.in_shape = {8, 8, 8};
  a.base_channels = 2;
  a.n_downsamplings = 1;
  return a;
}

/// Replaces the zero head with small random weights so decoded fields are
/// not the identity.
template <class T>
RegNet<T> randomize_head(RegNet<T> net, std::uint64_t seed, double scale = 0.1) {
  Rng rng(seed);
  for (auto& p : net.parameters()) {
    if (p.name.rfind("head.", 0) != 0) continue;
    for (auto& v : p.value.values()) v = static_cast<T>(rng.uniform(-scale, scale));
  }
  return net;
}

inline Volume random_volume(Dims d, Rng& rng) {
  Volume v = Volume::zeros(d);
  for (auto& x : v.voxels.values()) x = static_cast<float>(rng.uniform());
  return v;
}

/// Smooth random volume with a blob segmentation for each label.
inline std::pair<Volume, SegMap> random_subject(Dims d, int labels, Rng& rng) {
  Volume v = Volume::zeros(d);
  SegMap s = SegMap::zeros(d, labels);
  for (int l = 1; l <= labels; ++l) {
    const double cz = rng.uniform(0.25, 0.75) * d.d, cy = rng.uniform(0.25, 0.75) * d.h,
                 cx = rng.uniform(0.25, 0.75) * d.w;
    const double r = 0.22 * std::min({d.d, d.h, d.w});
    for (std::int64_t z = 0; z < d.d; ++z)
      for (std::int64_t y = 0; y < d.h; ++y)
        for (std::int64_t x = 0; x < d.w; ++x) {
          const double q = ((z - cz) * (z - cz) + (y - cy) * (y - cy) + (x - cx) * (x - cx)) / (r * r);
          const auto i = d.index(z, y, x);
          v.voxels[i] += static_cast<float>(l * std::exp(-q));
          if (q <= 1.0) s.labels[i] = static_cast<std::uint8_t>(l);
        }
  }
  for (auto& x : v.voxels.values()) x += static_cast<float>(0.05 * rng.uniform());
  return {normalize_volume(v), s};
}

}  // namespace reglat::testing
