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

// Deformation-field mathematics. Every forward kernel has a matching `_vjp`
// (vector-Jacobian product) used by the autodiff tape.

#pragma once

#include "reglat/core/tensor.hpp"
#include "reglat/volgrid.hpp"

namespace reglat {

/// Per-axis increments (3, D, H, W): channel c holds d(phi_c)/d(axis c).
template <class T>
struct GradientField {
  Tensor<T> inc;
  Dims dims() const { return Dims::from_shape(inc.shape(), 1); }
};

/// Sampling grid (3, D, H, W) in voxel coordinates.
template <class T>
struct DeformationGrid {
  Tensor<T> phi;
  Dims dims() const { return Dims::from_shape(phi.shape(), 1); }
  static DeformationGrid identity(Dims d) { return {make_identity_grid<T>(d)}; }
};

template <class T>
struct JacobianMap {
  Tensor<T> det;  // (D, H, W)
};

/// inc = max(0, 1 + r). A zero raw output gives unit increments (identity).
template <class T>
Tensor<T> increments_from_raw(const Tensor<T>& raw);
template <class T>
Tensor<T> increments_from_raw_vjp(const Tensor<T>& raw, const Tensor<T>& grad_inc);

/// phi[c] = exclusive prefix sum of inc[c] along axis c, so phi is 0 at the
/// first plane and unit increments reproduce the identity grid.
template <class T>
DeformationGrid<T> integrate_spatial_gradients(const GradientField<T>& g);
template <class T>
Tensor<T> integrate_spatial_gradients_vjp(const Tensor<T>& grad_phi);

/// Trilinear resampling of every channel of `v` (C, D, H, W) at `phi`, with
/// coordinates clamped to the volume.
template <class T>
Tensor<T> warp_trilinear(const Tensor<T>& v, const DeformationGrid<T>& grid);
/// Either output pointer may be null.
template <class T>
void warp_trilinear_vjp(const Tensor<T>& v, const DeformationGrid<T>& grid,
                        const Tensor<T>& grad_out, Tensor<T>* grad_v, Tensor<T>* grad_phi);

Volume warp_volume(const Volume& v, const DeformationGrid<float>& grid);
/// Warps the one-hot channels independently and returns soft labels
/// (L+1, D, H, W).
Tensor<float> warp_segmentation(const SegMap& s, const DeformationGrid<float>& grid);

/// Central differences inside, one-sided on the boundary planes. Every
/// extent must be at least 3.
template <class T>
JacobianMap<T> jacobian_determinant_map(const DeformationGrid<T>& grid);
template <class T>
Tensor<T> jacobian_determinant_vjp(const DeformationGrid<T>& grid, const Tensor<T>& grad_det);

/// Voxels not on any boundary plane.
inline bool is_interior(const Dims& d, std::int64_t z, std::int64_t y, std::int64_t x) {
  return z > 0 && y > 0 && x > 0 && z < d.d - 1 && y < d.h - 1 && x < d.w - 1;
}

/// Share of interior voxels whose determinant is <= 0.
template <class T>
double folding_fraction(const JacobianMap<T>& jac);

}  // namespace reglat
