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

// Volume and label-map data model, intensity normalization, affine
// resampling and the on-disk volume store.
//
// Voxel coordinates are (axis0, axis1, axis2) = (z, y, x) in C order; axis 2
// is contiguous. Affine matrices act on homogeneous voxel coordinates
// (z, y, x, 1).

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "reglat/core/tensor.hpp"

namespace reglat {

struct Volume {
  Tensor<float> voxels;  // (D, H, W)
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  static Volume zeros(Dims dims) { return {Tensor<float>(dims.shape()), {1.0, 1.0, 1.0}}; }
  Dims dims() const { return Dims::from_shape(voxels.shape()); }
  float& at(std::int64_t z, std::int64_t y, std::int64_t x) {
    return voxels[dims().index(z, y, x)];
  }
  float at(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return voxels[dims().index(z, y, x)];
  }
};

/// Integer label field. Labels lie in [0, num_labels]; 0 is background.
struct SegMap {
  Tensor<std::uint8_t> labels;  // (D, H, W)
  int num_labels = 1;

  static SegMap zeros(Dims dims, int num_labels) {
    return {Tensor<std::uint8_t>(dims.shape()), num_labels};
  }
  Dims dims() const { return Dims::from_shape(labels.shape()); }
  std::uint8_t at(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return labels[dims().index(z, y, x)];
  }
};

/// Throws kInvalidArgument when the invariants of the type do not hold.
void validate(const Volume& v);
void validate(const SegMap& s);

/// Z-score, clip to [-5, 5] (endpoints included), min-max rescale to [0, 1].
/// Statistics are taken over the whole volume. Constant inputs, or inputs
/// that are flat after clipping, map to all zeros and emit a warning.
Volume normalize_volume(const Volume& v);

/// (3, D, H, W) tensor whose channel c holds the axis-c voxel coordinate.
template <class T>
Tensor<T> make_identity_grid(Dims dims);

/// One-hot encoding with num_labels + 1 channels (channel 0 = background).
template <class T>
Tensor<T> one_hot(const SegMap& seg);

/// Per-voxel argmax over channels of a (L+1, D, H, W) soft label tensor;
/// ties resolve to the lowest label.
template <class T>
SegMap argmax_labels(const Tensor<T>& soft);

enum class Interp { kLinear, kNearest };

using Affine = Eigen::Matrix4d;

namespace affine {
Affine translation(int axis, double voxels);
/// Rotation in the plane orthogonal to `axis`, about the volume center.
Affine rotation(int axis, double degrees, Dims dims);
/// Isotropic zoom about the volume center.
Affine scaling(double factor, Dims dims);
/// Mirror along `axis` about the volume center.
Affine flip(int axis, Dims dims);
Affine center_about(const Affine& linear, Dims dims);
}  // namespace affine

/// Resamples so that output(p) = input(A^-1 p). Out-of-bounds samples take the
/// clamped border value. Singular `a` throws.
Volume apply_affine(const Volume& v, const Affine& a, Interp interp = Interp::kLinear);
/// Label maps always use nearest-neighbour sampling.
SegMap apply_affine(const SegMap& s, const Affine& a);

// --- volume store ---------------------------------------------------------
//
// A stored array is a directory with `meta.json` and `data.raw` (raw
// little-endian, C order).

void save_volume(const Volume& v, const std::filesystem::path& dir);
Volume load_volume(const std::filesystem::path& dir);
void save_segmap(const SegMap& s, const std::filesystem::path& dir);
SegMap load_segmap(const std::filesystem::path& dir);
/// Arbitrary-rank float32 arrays (deformation grids use shape (3, D, H, W)).
void save_array(const Tensor<float>& t, const std::filesystem::path& dir);
Tensor<float> load_array(const std::filesystem::path& dir);

enum class Split { kTrain, kVal };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct SubjectEntry {
  std::string id;
  std::filesystem::path volume_path;  // relative to the manifest directory
  std::filesystem::path seg_path;
  Split split = Split::kTrain;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory holding manifest.json
  std::vector<SubjectEntry> subjects;

  std::vector<SubjectEntry> in_split(Split split) const;
  const SubjectEntry& find(const std::string& id) const;
  Volume load_subject_volume(const SubjectEntry& s) const;
  SegMap load_subject_seg(const SubjectEntry& s) const;
};

/// Writes `manifest.json` into `dir` (paths stored relative to `dir`).
void save_manifest(const DatasetManifest& m, const std::filesystem::path& dir);
/// Accepts either the manifest file or its directory. Checks id uniqueness
/// and that every referenced store exists.
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace reglat
