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

// Principal components of the encoder latent space.

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "reglat/trainer.hpp"

namespace reglat {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One flattened latent code per row.
struct LatentMatrix {
  RowMatrixF rows;
  std::vector<std::string> subject_ids;
  std::string model_fingerprint;

  std::size_t n() const { return static_cast<std::size_t>(rows.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(rows.cols()); }
};

LatentMatrix collect_latents(const RegNet<float>& net, const std::vector<Subject>& subjects);
LatentMatrix collect_latents(const Checkpoint& ckpt, const DatasetManifest& m, Split split);

/// latents.bin: magic, JSON header (ids, N, fingerprint), float32 LE rows.
void save_latents(const LatentMatrix& l, const std::filesystem::path& path);
LatentMatrix load_latents(const std::filesystem::path& path);

struct PCABasis {
  int K = 0;
  Eigen::MatrixXd components;  // K x N, orthonormal rows
  Eigen::VectorXd mean;        // length N; used only when `center`
  Eigen::VectorXd singular_values;
  Eigen::VectorXd evr;         // sigma_j^2 / sum of all sigma^2
  bool center = false;
  std::string model_fingerprint;

  std::size_t dim() const { return static_cast<std::size_t>(components.cols()); }
  Eigen::VectorXd component(int j) const;  // 1-based
  /// Components and mean rounded to float32, as stored on disk.
  PCABasis quantized() const;
};

/// Thin SVD of the (optionally centered) rows; the largest-magnitude entry of
/// every component is made positive.
PCABasis fit_pca(const Eigen::MatrixXd& rows, int K, bool center);
PCABasis fit_pca(const LatentMatrix& l, int K, bool center);

struct CoefficientVector {
  std::string subject_id;
  std::vector<double> a;
};

std::vector<double> project(std::span<const float> flat, const PCABasis& basis);
Eigen::VectorXd project(const Eigen::VectorXd& flat, const PCABasis& basis);
std::vector<CoefficientVector> project_all(const LatentMatrix& l, const PCABasis& basis);
Eigen::VectorXd reconstruct(const std::vector<double>& a, const PCABasis& basis);

/// Throws kFingerprintMismatch unless the basis was fitted on `net`.
void check_fingerprint(const PCABasis& basis, const RegNet<float>& net);

/// Increments decoded from sum_j a_j u_j (no mean added).
GradientField<float> decode_coefficients(const PCABasis& basis, const std::vector<double>& a,
                                         const RegNet<float>& net);
/// Grid of D(lambda * u_j); j is 1-based.
DeformationGrid<float> decode_component(const PCABasis& basis, int j, double lambda,
                                        const RegNet<float>& net);

/// basis.json + components.raw + mean.raw in `dir`.
void save_basis(const PCABasis& b, const std::filesystem::path& dir);
PCABasis load_basis(const std::filesystem::path& dir);

/// coeffs.csv with header `subject,a1..aK`; values in shortest round-trip form.
void save_coefficients(const std::vector<CoefficientVector>& c, const std::filesystem::path& path);
std::vector<CoefficientVector> load_coefficients(const std::filesystem::path& path);

}  // namespace reglat
