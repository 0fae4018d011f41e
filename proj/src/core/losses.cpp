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

#include "reglat/losses.hpp"

#include <algorithm>
#include <cmath>

namespace reglat {

void LossWeights::validate() const {
  require(alpha >= 0.0 && beta >= 0.0, "loss weights must be non-negative");
  require(ncc_window == 0 || (ncc_window > 0 && ncc_window % 2 == 1),
          "ncc window must be 0 (global) or a positive odd integer");
}

const std::vector<std::string>& LossTerms::csv_columns() {
  static const std::vector<std::string> cols = {
      "L_total",  "L_sim_f", "L_seg_f",    "L_smooth_f", "L_jac_f",
      "L_sim_b",  "L_seg_b", "L_smooth_b", "L_jac_b"};
  return cols;
}

namespace {

template <class T>
Dims single_volume_dims(const Tensor<T>& t) {
  const Shape& s = t.shape();
  if (s.size() == 3) return Dims::from_shape(s);
  require(s.size() == 4 && s[0] == 1, "expected a single-channel volume, got " + shape_str(s));
  return Dims::from_shape(s, 1);
}

// Truncated box sum of side `window` along each axis; the operator is
// self-adjoint, which the backward pass relies on.
template <class T>
std::vector<T> box_sum(const std::vector<T>& in, const Dims& d, int window) {
  const std::int64_t r = window / 2;
  std::vector<T> cur = in, next(in.size());
  const std::int64_t strides[3] = {d.h * d.w, d.w, 1};
  for (int axis = 0; axis < 3; ++axis) {
    const std::int64_t len = d[axis], step = strides[axis];
    std::vector<T> prefix(static_cast<std::size_t>(len + 1));
    for (std::size_t i = 0; i < in.size(); ++i) {
      if ((static_cast<std::int64_t>(i) / step) % len != 0) continue;
      prefix[0] = 0;
      for (std::int64_t k = 0; k < len; ++k)
        prefix[k + 1] = prefix[k] + cur[i + static_cast<std::size_t>(k * step)];
      for (std::int64_t k = 0; k < len; ++k) {
        const std::int64_t lo = std::max<std::int64_t>(0, k - r);
        const std::int64_t hi = std::min<std::int64_t>(len, k + r + 1);
        next[i + static_cast<std::size_t>(k * step)] = prefix[hi] - prefix[lo];
      }
    }
    std::swap(cur, next);
  }
  return cur;
}

template <class T>
std::vector<T> window_counts(const Dims& d, int window) {
  return box_sum(std::vector<T>(d.count(), T(1)), d, window);
}

struct LocalStats {
  std::vector<double> ia, ib, iaa, ibb, iab, cnt;
};

template <class T>
LocalStats local_stats(const Tensor<T>& a, const Tensor<T>& b, const Dims& d, int window) {
  const std::size_t n = d.count();
  std::vector<double> va(n), vb(n), vaa(n), vbb(n), vab(n);
  for (std::size_t i = 0; i < n; ++i) {
    va[i] = a[i];
    vb[i] = b[i];
    vaa[i] = double(a[i]) * a[i];
    vbb[i] = double(b[i]) * b[i];
    vab[i] = double(a[i]) * b[i];
  }
  return {box_sum(va, d, window),  box_sum(vb, d, window),  box_sum(vaa, d, window),
          box_sum(vbb, d, window), box_sum(vab, d, window), window_counts<double>(d, window)};
}

}  // namespace

template <class T>
T ncc_loss(const Tensor<T>& a, const Tensor<T>& b, int window) {
  require(a.shape() == b.shape(), "ncc inputs differ in shape");
  const Dims d = single_volume_dims(a);
  const std::size_t n = d.count();
  if (window == 0) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= double(n);
    mb /= double(n);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double da = a[i] - ma, db = b[i] - mb;
      sab += da * db;
      saa += da * da;
      sbb += db * db;
    }
    return static_cast<T>(1.0 - sab / std::sqrt(saa * sbb + kNccEpsilon));
  }
  require(window > 0 && window % 2 == 1, "ncc window must be odd");
  const LocalStats s = local_stats(a, b, d, window);
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double cross = s.iab[i] - s.ia[i] * s.ib[i] / s.cnt[i];
    const double va = std::max(0.0, s.iaa[i] - s.ia[i] * s.ia[i] / s.cnt[i]);
    const double vb = std::max(0.0, s.ibb[i] - s.ib[i] * s.ib[i] / s.cnt[i]);
    acc += cross / std::sqrt(va * vb + kNccEpsilon);
  }
  return static_cast<T>(1.0 - acc / double(n));
}

template <class T>
void ncc_loss_vjp(const Tensor<T>& a, const Tensor<T>& b, int window, T grad,
                  Tensor<T>* grad_a, Tensor<T>* grad_b) {
  require(a.shape() == b.shape(), "ncc inputs differ in shape");
  const Dims d = single_volume_dims(a);
  const std::size_t n = d.count();
  if (grad_a) *grad_a = Tensor<T>(a.shape());
  if (grad_b) *grad_b = Tensor<T>(b.shape());
  if (window == 0) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= double(n);
    mb /= double(n);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double da = a[i] - ma, db = b[i] - mb;
      sab += da * db;
      saa += da * da;
      sbb += db * db;
    }
    const double den = std::sqrt(saa * sbb + kNccEpsilon);
    const double den3 = den * den * den;
    // loss = 1 - sab / den
    const double g = -static_cast<double>(grad);
    for (std::size_t i = 0; i < n; ++i) {
      const double da = a[i] - ma, db = b[i] - mb;
      if (grad_a) (*grad_a)[i] = static_cast<T>(g * (db / den - sab * sbb * da / den3));
      if (grad_b) (*grad_b)[i] = static_cast<T>(g * (da / den - sab * saa * db / den3));
    }
    return;
  }
  const LocalStats s = local_stats(a, b, d, window);
  std::vector<double> g_ia(n), g_ib(n), g_iaa(n), g_ibb(n), g_iab(n);
  const double gcc = -static_cast<double>(grad) / double(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = s.cnt[i];
    const double cross = s.iab[i] - s.ia[i] * s.ib[i] / c;
    const double va_raw = s.iaa[i] - s.ia[i] * s.ia[i] / c;
    const double vb_raw = s.ibb[i] - s.ib[i] * s.ib[i] / c;
    const double va = std::max(0.0, va_raw), vb = std::max(0.0, vb_raw);
    const double den = std::sqrt(va * vb + kNccEpsilon);
    const double d_cross = gcc / den;
    const double d_va = va_raw > 0.0 ? -gcc * cross * vb / (2.0 * den * den * den) : 0.0;
    const double d_vb = vb_raw > 0.0 ? -gcc * cross * va / (2.0 * den * den * den) : 0.0;
    g_iab[i] = d_cross;
    g_iaa[i] = d_va;
    g_ibb[i] = d_vb;
    g_ia[i] = -d_cross * s.ib[i] / c - 2.0 * d_va * s.ia[i] / c;
    g_ib[i] = -d_cross * s.ia[i] / c - 2.0 * d_vb * s.ib[i] / c;
  }
  const auto bia = box_sum(g_ia, d, window), bib = box_sum(g_ib, d, window);
  const auto biaa = box_sum(g_iaa, d, window), bibb = box_sum(g_ibb, d, window);
  const auto biab = box_sum(g_iab, d, window);
  for (std::size_t i = 0; i < n; ++i) {
    if (grad_a) (*grad_a)[i] = static_cast<T>(bia[i] + 2.0 * a[i] * biaa[i] + b[i] * biab[i]);
    if (grad_b) (*grad_b)[i] = static_cast<T>(bib[i] + 2.0 * b[i] * bibb[i] + a[i] * biab[i]);
  }
}

template <class T>
T dice_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require(pred.shape() == target.shape(), "dice inputs differ in shape");
  require(pred.rank() == 4 && pred.dim(0) >= 2, "dice inputs must be (C>=2, D, H, W)");
  const auto channels = static_cast<std::size_t>(pred.dim(0));
  const std::size_t n = pred.size() / channels;
  double acc = 0;
  for (std::size_t c = 1; c < channels; ++c) {
    double inter = 0, sp = 0, st = 0;
    for (std::size_t i = c * n; i < (c + 1) * n; ++i) {
      inter += double(pred[i]) * target[i];
      sp += pred[i];
      st += target[i];
    }
    acc += 2.0 * inter / (sp + st + kDiceEpsilon);
  }
  return static_cast<T>(1.0 - acc / double(channels - 1));
}

template <class T>
Tensor<T> dice_loss_vjp(const Tensor<T>& pred, const Tensor<T>& target, T grad) {
  const auto channels = static_cast<std::size_t>(pred.dim(0));
  const std::size_t n = pred.size() / channels;
  Tensor<T> g(pred.shape());
  const double scale = -static_cast<double>(grad) / double(channels - 1);
  for (std::size_t c = 1; c < channels; ++c) {
    double inter = 0, sp = 0, st = 0;
    for (std::size_t i = c * n; i < (c + 1) * n; ++i) {
      inter += double(pred[i]) * target[i];
      sp += pred[i];
      st += target[i];
    }
    const double den = sp + st + kDiceEpsilon;
    for (std::size_t i = c * n; i < (c + 1) * n; ++i) {
      g[i] = static_cast<T>(scale * (2.0 * target[i] / den - 2.0 * inter / (den * den)));
    }
  }
  return g;
}

template <class T>
T jacobian_loss(const DeformationGrid<T>& grid) {
  const JacobianMap<T> jac = jacobian_determinant_map(grid);
  const Dims d = grid.dims();
  double acc = 0;
  std::size_t count = 0;
  for (std::int64_t z = 1; z < d.d - 1; ++z)
    for (std::int64_t y = 1; y < d.h - 1; ++y)
      for (std::int64_t x = 1; x < d.w - 1; ++x, ++count)
        acc += std::max(0.0, -static_cast<double>(jac.det[d.index(z, y, x)]));
  return static_cast<T>(acc / double(count));
}

template <class T>
Tensor<T> jacobian_loss_vjp(const DeformationGrid<T>& grid, T grad) {
  const JacobianMap<T> jac = jacobian_determinant_map(grid);
  const Dims d = grid.dims();
  const double count = double((d.d - 2) * (d.h - 2) * (d.w - 2));
  Tensor<T> g_det(d.shape());
  for (std::int64_t z = 1; z < d.d - 1; ++z)
    for (std::int64_t y = 1; y < d.h - 1; ++y)
      for (std::int64_t x = 1; x < d.w - 1; ++x) {
        const std::size_t i = d.index(z, y, x);
        if (jac.det[i] < T(0)) g_det[i] = static_cast<T>(-static_cast<double>(grad) / count);
      }
  return jacobian_determinant_vjp(grid, g_det);
}

namespace {

template <class T, class Fn>
void for_each_forward_diff(const GradientField<T>& g, Fn&& fn) {
  const Dims d = g.dims();
  const std::size_t n = d.count();
  const std::int64_t strides[3] = {d.h * d.w, d.w, 1};
  for (int c = 0; c < 3; ++c)
    for (int axis = 0; axis < 3; ++axis) {
      const std::int64_t len = d[axis];
      const auto step = static_cast<std::size_t>(strides[axis]);
      for (std::size_t i = 0; i < n; ++i) {
        if ((static_cast<std::int64_t>(i / step)) % len == len - 1) continue;
        fn(c * n + i, c * n + i + step);
      }
    }
}

template <class T>
double forward_diff_count(const GradientField<T>& g) {
  const Dims d = g.dims();
  return 3.0 * double((d.d - 1) * d.h * d.w + d.d * (d.h - 1) * d.w + d.d * d.h * (d.w - 1));
}

}  // namespace

template <class T>
T smoothness_loss(const GradientField<T>& g) {
  require(g.inc.rank() == 4 && g.inc.dim(0) == 3, "gradient field must be (3, D, H, W)");
  const double count = forward_diff_count(g);
  if (count == 0) return T(0);
  double acc = 0;
  for_each_forward_diff(g, [&](std::size_t i, std::size_t j) {
    const double diff = double(g.inc[j]) - g.inc[i];
    acc += diff * diff;
  });
  return static_cast<T>(acc / count);
}

template <class T>
Tensor<T> smoothness_loss_vjp(const GradientField<T>& g, T grad) {
  Tensor<T> out(g.inc.shape());
  const double count = forward_diff_count(g);
  if (count == 0) return out;
  const double scale = 2.0 * static_cast<double>(grad) / count;
  for_each_forward_diff(g, [&](std::size_t i, std::size_t j) {
    const double v = scale * (double(g.inc[j]) - g.inc[i]);
    out[j] += static_cast<T>(v);
    out[i] -= static_cast<T>(v);
  });
  return out;
}

std::vector<double> dice_per_label(const SegMap& a, const SegMap& b) {
  require(a.labels.shape() == b.labels.shape(), "label maps differ in shape");
  const int labels = std::max(a.num_labels, b.num_labels);
  std::vector<double> inter(labels + 1), sa(labels + 1), sb(labels + 1);
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const int la = a.labels[i], lb = b.labels[i];
    sa[la] += 1;
    sb[lb] += 1;
    if (la == lb) inter[la] += 1;
  }
  std::vector<double> out;
  for (int l = 1; l <= labels; ++l) {
    const double den = sa[l] + sb[l];
    out.push_back(den > 0 ? 2.0 * inter[l] / den : 1.0);
  }
  return out;
}

double mean_dice(const SegMap& a, const SegMap& b) {
  const auto per = dice_per_label(a, b);
  double acc = 0;
  for (double v : per) acc += v;
  return per.empty() ? 1.0 : acc / double(per.size());
}

#define REGLAT_INSTANTIATE_LOSSES(T)                                                            \
  template T ncc_loss<T>(const Tensor<T>&, const Tensor<T>&, int);                              \
  template void ncc_loss_vjp<T>(const Tensor<T>&, const Tensor<T>&, int, T, Tensor<T>*,          \
                                Tensor<T>*);                                                    \
  template T dice_loss<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> dice_loss_vjp<T>(const Tensor<T>&, const Tensor<T>&, T);                   \
  template T jacobian_loss<T>(const DeformationGrid<T>&);                                       \
  template Tensor<T> jacobian_loss_vjp<T>(const DeformationGrid<T>&, T);                        \
  template T smoothness_loss<T>(const GradientField<T>&);                                       \
  template Tensor<T> smoothness_loss_vjp<T>(const GradientField<T>&, T);

REGLAT_INSTANTIATE_LOSSES(float)
REGLAT_INSTANTIATE_LOSSES(double)

}  // namespace reglat
