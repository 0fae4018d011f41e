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

// Registration losses. Each loss has a value kernel and a `_vjp` that returns
// the gradient with respect to its inputs scaled by the upstream scalar.

#pragma once

#include <string>
#include <vector>

#include "reglat/core/tensor.hpp"
#include "reglat/volgrid.hpp"
#include "reglat/warp.hpp"

namespace reglat {

inline constexpr double kNccEpsilon = 1e-5;
inline constexpr double kDiceEpsilon = 1e-5;

struct LossWeights {
  double alpha = 0.1;   // smoothness
  double beta = 1.0;    // Jacobian folding; 0 disables the term
  int ncc_window = 0;   // 0 = global correlation, otherwise odd cube side

  void validate() const;
};

/// 1 - NCC(a, b), in [0, 2]. The inputs hold one volume each: either
/// (D, H, W) or (1, D, H, W). Windows are truncated at the border.
template <class T>
T ncc_loss(const Tensor<T>& a, const Tensor<T>& b, int window);
template <class T>
void ncc_loss_vjp(const Tensor<T>& a, const Tensor<T>& b, int window, T grad,
                  Tensor<T>* grad_a, Tensor<T>* grad_b);

/// 1 - mean over foreground channels (1..C-1) of soft Dice; inputs are
/// (C, D, H, W) with channel 0 the background.
template <class T>
T dice_loss(const Tensor<T>& pred, const Tensor<T>& target);
template <class T>
Tensor<T> dice_loss_vjp(const Tensor<T>& pred, const Tensor<T>& target, T grad);

/// Mean over interior voxels of max(0, -det J).
template <class T>
T jacobian_loss(const DeformationGrid<T>& grid);
template <class T>
Tensor<T> jacobian_loss_vjp(const DeformationGrid<T>& grid, T grad);

/// Sum of squared forward differences of the increments along all three
/// axes, divided by the number of difference terms.
template <class T>
T smoothness_loss(const GradientField<T>& g);
template <class T>
Tensor<T> smoothness_loss_vjp(const GradientField<T>& g, T grad);

/// Loss terms for one registration direction.
struct DirectionTerms {
  double sim = 0, seg = 0, smooth = 0, jac = 0;
  double weighted(const LossWeights& w) const {
    return sim + seg + w.alpha * smooth + w.beta * jac;
  }
};

struct LossTerms {
  DirectionTerms fwd, bwd;
  double total = 0;

  static const std::vector<std::string>& csv_columns();
};

// --- hard-label metrics ------------------------------------------------------

/// Dice per foreground label (index 0 holds label 1). A label absent from
/// both maps scores 1.
std::vector<double> dice_per_label(const SegMap& a, const SegMap& b);
double mean_dice(const SegMap& a, const SegMap& b);

}  // namespace reglat
