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

// Differentiable wrappers that put the nn / warp / loss kernels on a tape.

#pragma once

#include <memory>
#include <vector>

#include "reglat/autodiff.hpp"
#include "reglat/losses.hpp"
#include "reglat/nn.hpp"
#include "reglat/warp.hpp"

namespace reglat::ad {

template <class T>
Var sub(Tape<T>& t, Var a, Var b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  require(va.shape() == vb.shape(), "sub: shape mismatch");
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(a, g);
    Tensor<T> neg(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
    tp.accumulate(b, std::move(neg));
  });
}

template <class T>
Var neg(Tape<T>& t, Var a) {
  Tensor<T> out(t.value(a).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -t.value(a)[i];
  return t.record(std::move(out), {a}, [a](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> n(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) n[i] = -g[i];
    tp.accumulate(a, std::move(n));
  });
}

/// Weighted sum of scalar nodes: sum_i w_i * x_i.
template <class T>
Var weighted_sum(Tape<T>& t, const std::vector<Var>& xs, const std::vector<T>& w) {
  require(xs.size() == w.size(), "weighted_sum: arity mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) acc += w[i] * t.scalar(xs[i]);
  return t.record(Tensor<T>({1}, {acc}), xs, [xs, w](Tape<T>& tp, const Tensor<T>& g) {
    for (std::size_t i = 0; i < xs.size(); ++i) tp.accumulate(xs[i], Tensor<T>({1}, {w[i] * g[0]}));
  });
}

template <class T>
Var reshape(Tape<T>& t, Var a, Shape shape) {
  const Shape original = t.value(a).shape();
  return t.record(t.value(a).reshaped(std::move(shape)), {a},
                  [a, original](Tape<T>& tp, const Tensor<T>& g) { tp.accumulate(a, g.reshaped(original)); });
}

/// Concatenates along the channel axis of (C, D, H, W) tensors.
template <class T>
Var concat_channels(Tape<T>& t, Var a, Var b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  require(va.rank() == 4 && vb.rank() == 4 && Dims::from_shape(va.shape(), 1) ==
                                                 Dims::from_shape(vb.shape(), 1),
          "concat_channels: spatial extents differ");
  Shape s = va.shape();
  s[0] += vb.dim(0);
  AlignedVector<T> data(va.storage());
  data.insert(data.end(), vb.storage().begin(), vb.storage().end());
  const std::size_t split = va.size();
  const Shape sa = va.shape(), sb = vb.shape();
  return t.record(Tensor<T>(s, std::move(data)), {a, b},
                  [a, b, split, sa, sb](Tape<T>& tp, const Tensor<T>& g) {
                    const auto& st = g.storage();
                    tp.accumulate(a, Tensor<T>(sa, AlignedVector<T>(st.begin(), st.begin() + long(split))));
                    tp.accumulate(b, Tensor<T>(sb, AlignedVector<T>(st.begin() + long(split), st.end())));
                  });
}

template <class T>
Var conv3d(Tape<T>& t, Var x, Var w, Var b, nn::ConvGeometry geom) {
  Tensor<T> y = nn::conv3d(t.value(x), t.value(w), t.value(b), geom);
  return t.record(std::move(y), {x, w, b}, [x, w, b, geom](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> gx, gw, gb;
    nn::conv3d_vjp(tp.value(x), tp.value(w), geom, g, tp.needs_grad(x) ? &gx : nullptr,
                   tp.needs_grad(w) ? &gw : nullptr, tp.needs_grad(b) ? &gb : nullptr);
    if (!gx.empty()) tp.accumulate(x, std::move(gx));
    if (!gw.empty()) tp.accumulate(w, std::move(gw));
    if (!gb.empty()) tp.accumulate(b, std::move(gb));
  });
}

template <class T>
Var conv_transpose3d(Tape<T>& t, Var x, Var w, Var b, nn::ConvGeometry geom) {
  Tensor<T> y = nn::conv_transpose3d(t.value(x), t.value(w), t.value(b), geom);
  return t.record(std::move(y), {x, w, b}, [x, w, b, geom](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> gx, gw, gb;
    nn::conv_transpose3d_vjp(tp.value(x), tp.value(w), geom, g, tp.needs_grad(x) ? &gx : nullptr,
                             tp.needs_grad(w) ? &gw : nullptr, tp.needs_grad(b) ? &gb : nullptr);
    if (!gx.empty()) tp.accumulate(x, std::move(gx));
    if (!gw.empty()) tp.accumulate(w, std::move(gw));
    if (!gb.empty()) tp.accumulate(b, std::move(gb));
  });
}

template <class T>
Var instance_norm(Tape<T>& t, Var x) {
  auto inv_std = std::make_shared<std::vector<T>>();
  Tensor<T> y = nn::instance_norm(t.value(x), inv_std.get());
  // The backward pass reads the normalized output back from the tape.
  const int self = static_cast<int>(t.size());
  return t.record(std::move(y), {x}, [x, inv_std, self](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(x, nn::instance_norm_vjp(tp.value(Var{self}), *inv_std, g));
  });
}

template <class T>
Var leaky_relu(Tape<T>& t, Var x, T slope) {
  return t.record(nn::leaky_relu(t.value(x), slope), {x}, [x, slope](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(x, nn::leaky_relu_vjp(tp.value(x), slope, g));
  });
}

/// Raw decoder output -> non-negative increments.
template <class T>
Var increments(Tape<T>& t, Var raw) {
  return t.record(increments_from_raw(t.value(raw)), {raw}, [raw](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(raw, increments_from_raw_vjp(tp.value(raw), g));
  });
}

template <class T>
Var integrate(Tape<T>& t, Var inc) {
  DeformationGrid<T> grid = integrate_spatial_gradients(GradientField<T>{t.value(inc)});
  return t.record(std::move(grid.phi), {inc}, [inc](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(inc, integrate_spatial_gradients_vjp(g));
  });
}

/// Warps v (C, D, H, W) with grid phi (3, D, H, W).
template <class T>
Var warp(Tape<T>& t, Var v, Var phi) {
  Tensor<T> out = warp_trilinear(t.value(v), DeformationGrid<T>{t.value(phi)});
  return t.record(std::move(out), {v, phi}, [v, phi](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> gv, gphi;
    warp_trilinear_vjp(tp.value(v), DeformationGrid<T>{tp.value(phi)}, g,
                       tp.needs_grad(v) ? &gv : nullptr, tp.needs_grad(phi) ? &gphi : nullptr);
    if (!gv.empty()) tp.accumulate(v, std::move(gv));
    if (!gphi.empty()) tp.accumulate(phi, std::move(gphi));
  });
}

template <class T>
Var jacobian_determinant(Tape<T>& t, Var phi) {
  JacobianMap<T> jac = jacobian_determinant_map(DeformationGrid<T>{t.value(phi)});
  return t.record(std::move(jac.det), {phi}, [phi](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(phi, jacobian_determinant_vjp(DeformationGrid<T>{tp.value(phi)}, g));
  });
}

template <class T>
Var ncc_loss(Tape<T>& t, Var a, Var b, int window) {
  const T v = reglat::ncc_loss(t.value(a), t.value(b), window);
  return t.record(Tensor<T>({1}, {v}), {a, b}, [a, b, window](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> ga, gb;
    reglat::ncc_loss_vjp(tp.value(a), tp.value(b), window, g[0], tp.needs_grad(a) ? &ga : nullptr,
                         tp.needs_grad(b) ? &gb : nullptr);
    if (!ga.empty()) tp.accumulate(a, std::move(ga));
    if (!gb.empty()) tp.accumulate(b, std::move(gb));
  });
}

/// Soft Dice loss of `pred` against a constant target.
template <class T>
Var dice_loss(Tape<T>& t, Var pred, Var target) {
  const T v = reglat::dice_loss(t.value(pred), t.value(target));
  return t.record(Tensor<T>({1}, {v}), {pred}, [pred, target](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(pred, reglat::dice_loss_vjp(tp.value(pred), tp.value(target), g[0]));
  });
}

template <class T>
Var jacobian_loss(Tape<T>& t, Var phi) {
  const T v = reglat::jacobian_loss(DeformationGrid<T>{t.value(phi)});
  return t.record(Tensor<T>({1}, {v}), {phi}, [phi](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(phi, reglat::jacobian_loss_vjp(DeformationGrid<T>{tp.value(phi)}, g[0]));
  });
}

template <class T>
Var smoothness_loss(Tape<T>& t, Var inc) {
  const T v = reglat::smoothness_loss(GradientField<T>{t.value(inc)});
  return t.record(Tensor<T>({1}, {v}), {inc}, [inc](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(inc, reglat::smoothness_loss_vjp(GradientField<T>{tp.value(inc)}, g[0]));
  });
}

}  // namespace reglat::ad
