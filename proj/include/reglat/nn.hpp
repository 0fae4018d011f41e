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

// Dense 3D network kernels on (C, D, H, W) activations (a single instance;
// batches are handled by the caller).

#pragma once

#include "reglat/core/tensor.hpp"

namespace reglat::nn {

inline constexpr double kInstanceNormEpsilon = 1e-5;

struct ConvGeometry {
  int kernel = 3, stride = 1, pad = 1;

  std::int64_t out_extent(std::int64_t in) const { return (in + 2 * pad - kernel) / stride + 1; }
  std::int64_t transposed_extent(std::int64_t in) const {
    return (in - 1) * stride - 2 * pad + kernel;
  }
  Dims out_dims(const Dims& in) const {
    return {out_extent(in.d), out_extent(in.h), out_extent(in.w)};
  }
  Dims transposed_dims(const Dims& in) const {
    return {transposed_extent(in.d), transposed_extent(in.h), transposed_extent(in.w)};
  }
};

/// x (Cin, D, H, W), weight (Cout, Cin, k, k, k), bias (Cout).
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvGeometry g);
/// Output pointers may be null.
template <class T>
void conv3d_vjp(const Tensor<T>& x, const Tensor<T>& weight, ConvGeometry g,
                const Tensor<T>& grad_out, Tensor<T>* grad_x, Tensor<T>* grad_w,
                Tensor<T>* grad_b);

/// Adjoint of conv3d in x: weight (Cin, Cout, k, k, k), bias (Cout).
template <class T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvGeometry g);
template <class T>
void conv_transpose3d_vjp(const Tensor<T>& x, const Tensor<T>& weight, ConvGeometry g,
                          const Tensor<T>& grad_out, Tensor<T>* grad_x, Tensor<T>* grad_w,
                          Tensor<T>* grad_b);

/// Per-channel standardization without affine parameters. `inv_std`
/// receives one value per channel for the backward pass.
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, std::vector<T>* inv_std);
template <class T>
Tensor<T> instance_norm_vjp(const Tensor<T>& y, const std::vector<T>& inv_std,
                            const Tensor<T>& grad_out);

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope);
template <class T>
Tensor<T> leaky_relu_vjp(const Tensor<T>& x, T slope, const Tensor<T>& grad_out);

}  // namespace reglat::nn
