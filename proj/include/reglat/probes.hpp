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

// Interpretability probes over the latent basis: affine perturbations,
// lambda sweeps with contour overlays, the skip-connection comparison and
// PCA applied directly to deformation fields.

#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "reglat/latent.hpp"

namespace reglat {

struct ProbeSpec {
  enum class Kind { kIdentity, kTranslation, kRotation, kScaling };
  Kind kind = Kind::kIdentity;
  int axis = 0;         // translation / rotation axis (0 = z)
  double amount = 0.0;  // voxels, degrees, or scaling factor s (zoom 1 + s)

  static ProbeSpec translation(int axis, double voxels) { return {Kind::kTranslation, axis, voxels}; }
  static ProbeSpec rotation(int axis, double degrees) { return {Kind::kRotation, axis, degrees}; }
  static ProbeSpec scaling(double factor) { return {Kind::kScaling, 0, factor}; }
  static ProbeSpec identity() { return {}; }
  /// Defaults: 10 voxels along z, 20 degrees about z, scaling factor 0.2.
  static std::vector<ProbeSpec> defaults();

  /// "identity", "translation[:axis[:voxels]]", "rotation[:axis[:degrees]]",
  /// "scaling[:factor]"; axis is z/y/x or 0/1/2.
  static ProbeSpec parse(const std::string& text);
  std::string name() const;      // kind only, e.g. "translation"
  std::string describe() const;  // e.g. "translation:z:10"
  Affine affine(Dims dims) const;
  void validate() const;
};

struct ComponentStats {
  double median = 0, q1 = 0, q3 = 0, min = 0, max = 0;
};

struct ProbeResult {
  std::string transform;
  std::vector<std::string> subjects;       // sorted ids
  std::vector<std::vector<double>> deltas;  // [subject][component] |a_j(X) - a_j(X')|
  std::vector<ComponentStats> stats;        // per component
  double dominance_ratio = 0;               // max median / sum of medians (0 when all medians are 0)
  int activation_count = 0;                 // components with median > 10% of the max median

  int K() const { return static_cast<int>(stats.size()); }
  nlohmann::json summary_json() const;
};

/// Quartiles by linear interpolation between order statistics.
ComponentStats component_stats(std::vector<double> values);
/// Fills stats, dominance_ratio and activation_count from deltas.
void summarize(ProbeResult& r);

ProbeResult affine_perturbation_probe(const RegNet<float>& net, const PCABasis& basis,
                                      std::vector<Subject> subjects, const ProbeSpec& spec);

/// `transform,subject,component,abs_delta`, components 1-based.
void write_probe_csv(const ProbeResult& r, const std::filesystem::path& path);
ProbeResult read_probe_csv(const std::filesystem::path& path);

struct SkipComparison {
  ProbeResult noskip, skip;
  nlohmann::json report() const;
};

SkipComparison skip_connection_comparison(const RegNet<float>& noskip, const PCABasis& basis_noskip,
                                          const RegNet<float>& skip, const PCABasis& basis_skip,
                                          const std::vector<Subject>& subjects, const ProbeSpec& spec);
/// 2K summary rows: model,component,median,q1,q3,activated.
void write_skip_comparison_csv(const SkipComparison& c, const std::filesystem::path& path);

// --- slices and contours ----------------------------------------------------------------

struct Slice {
  int rows = 0, cols = 0;
  std::vector<float> values;  // row-major
};

/// Plane `index` perpendicular to `axis`; rows/cols are the remaining axes in order.
Slice extract_slice(const Tensor<float>& vol, int axis, std::int64_t index);
Slice extract_slice(const SegMap& seg, int axis, std::int64_t index, int label);

/// Binary 8-bit PGM of values mapped from [lo, hi] to [0, 255].
std::string encode_pgm(const Slice& s, double lo = 0.0, double hi = 1.0);
struct Pgm {
  int rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};
Pgm decode_pgm(const std::string& bytes);

using Polygon = std::vector<std::array<double, 2>>;  // (r, c), closed (last != first)

/// Marching squares at 0.5 on a zero-padded binary mask; every polygon is
/// closed and lies within [-0.5, rows-0.5] x [-0.5, cols-0.5].
std::vector<Polygon> marching_squares(const Slice& mask);
/// Pixel centers inside an odd number of polygons.
Slice rasterize(const std::vector<Polygon>& polygons, int rows, int cols);

struct ContourRecord {
  std::int64_t slice = 0;
  int axis = 0;
  int label = 0;
  std::string role;  // "original" or "deformed"
  std::vector<Polygon> polygons;
};
std::vector<ContourRecord> contours_for(const SegMap& seg, int axis, std::int64_t index,
                                        const std::string& role);
/// One JSON object per polygon: {slice, axis, label, role, points}.
nlohmann::json contours_json(const std::vector<ContourRecord>& records);

struct SweepOptions {
  std::vector<double> lambdas{-200, -100, 0, 100, 200};
  std::array<std::int64_t, 3> slices{-1, -1, -1};  // -1 = center plane
};

/// Writes one PGM per (lambda, plane) plus contours.json and sweep.json into
/// out_dir. Returns the image paths.
std::vector<std::filesystem::path> lambda_sweep(const RegNet<float>& net, const PCABasis& basis,
                                                const Subject& subject, int j,
                                                const SweepOptions& opt,
                                                const std::filesystem::path& out_dir);

/// PCA over flattened forward increments of (X, reference) for every subject
/// X other than the reference.
PCABasis pca_on_fields(const RegNet<float>& net, const std::vector<Subject>& subjects,
                       const Subject& reference, int K, bool center);

}  // namespace reglat
