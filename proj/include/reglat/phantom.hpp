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

// Synthetic dataset generator. Each subject is the template anatomy mapped
// through a random affine and a smooth random warp, plus Gaussian noise.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "reglat/volgrid.hpp"

namespace reglat {

struct Structure {
  enum class Kind { kEllipsoid, kBox };
  Kind kind = Kind::kEllipsoid;
  std::array<double, 3> center{};  // voxel coordinates (z, y, x)
  std::array<double, 3> radii{};   // semi-axes / half-widths
  double intensity = 1.0;
  int label = 0;                   // 0 = unlabeled tissue
};

struct Jitter {
  std::array<double, 3> translation{};  // max |shift| per axis, voxels
  std::array<double, 3> rotation{};     // max |angle| about each axis, degrees
  double scale = 0.0;                   // zoom drawn from [1 - scale, 1 + scale]
};

struct PhantomSpec {
  int size = 32;
  int n_subjects = 40;
  int n_val = 8;
  std::vector<Structure> structures;
  Jitter jitter;
  double smooth_warp_amplitude = 0.0;  // voxels
  int warp_control_points = 4;         // per axis
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;

  /// Template used when no structures are given: a body ellipsoid holding
  /// two labeled lobes and a labeled box.
  static std::vector<Structure> default_structures(int size);
  /// Translation-only benchmark: +-6 voxels along z and +-2 along y and x,
  /// no rotation, scale or warp.
  static PhantomSpec translation_benchmark(std::uint64_t seed = 0);

  int num_labels() const;
  /// Throws when a structure can leave the volume under the maximal jitter.
  void validate() const;

  nlohmann::json to_json() const;
  static PhantomSpec from_json(const nlohmann::json& j);
};

struct SubjectTruth {
  std::string id;
  Affine affine;  // template voxel coordinates -> subject voxel coordinates
  std::array<double, 3> translation{}, rotation_deg{};
  double scale = 1.0;
  std::uint64_t warp_seed = 0;
};

struct PhantomSubject {
  Volume volume;
  SegMap seg;
  SubjectTruth truth;
};

/// Renders subject `index` of the dataset described by `spec`.
PhantomSubject render_phantom_subject(const PhantomSpec& spec, int index);

/// Writes all subjects, `manifest.json`, `truth.json` and `phantom.json`
/// into `out_dir`. The last `n_val` subjects form the validation split.
DatasetManifest generate_phantom_dataset(const PhantomSpec& spec,
                                         const std::filesystem::path& out_dir);

std::vector<SubjectTruth> load_truth(const std::filesystem::path& path);

}  // namespace reglat
