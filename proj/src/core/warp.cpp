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

#include "reglat/warp.hpp"

#include <array>

#include "reglat/sampling.hpp"

namespace reglat {

namespace {

void check_field(const Shape& s, const char* what) {
  require(s.size() == 4 && s[0] == 3 && s[1] > 0 && s[2] > 0 && s[3] > 0,
          std::string(what) + " must have shape (3, D, H, W), got " + shape_str(s));
}

// Strides (in elements) of the spatial axes of a (D, H, W) block.
std::array<std::int64_t, 3> spatial_strides(const Dims& d) { return {d.h * d.w, d.w, 1}; }

}  // namespace

template <class T>
Tensor<T> increments_from_raw(const Tensor<T>& raw) {
  Tensor<T> inc(raw.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const T v = T(1) + raw[i];
    inc[i] = v > T(0) ? v : T(0);
  }
  return inc;
}

template <class T>
Tensor<T> increments_from_raw_vjp(const Tensor<T>& raw, const Tensor<T>& grad_inc) {
  Tensor<T> g(raw.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) g[i] = (T(1) + raw[i] > T(0)) ? grad_inc[i] : T(0);
  return g;
}

template <class T>
DeformationGrid<T> integrate_spatial_gradients(const GradientField<T>& g) {
  check_field(g.inc.shape(), "gradient field");
  const Dims d = g.dims();
  const std::size_t n = d.count();
  const auto stride = spatial_strides(d);
  DeformationGrid<T> out{Tensor<T>(g.inc.shape())};
  for (int c = 0; c < 3; ++c) {
    const T* in = g.inc.data() + c * n;
    T* phi = out.phi.data() + c * n;
    const std::int64_t len = d[c], step = stride[c];
    // Every line along axis c starts at an index whose axis-c coordinate is 0.
    for (std::size_t i = 0; i < n; ++i) {
      if ((static_cast<std::int64_t>(i) / step) % len != 0) continue;
      T acc = 0;
      for (std::int64_t k = 0; k < len; ++k) {
        const std::size_t j = i + static_cast<std::size_t>(k * step);
        phi[j] = acc;
        acc += in[j];
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> integrate_spatial_gradients_vjp(const Tensor<T>& grad_phi) {
  check_field(grad_phi.shape(), "grid gradient");
  const Dims d = Dims::from_shape(grad_phi.shape(), 1);
  const std::size_t n = d.count();
  const auto stride = spatial_strides(d);
  Tensor<T> out(grad_phi.shape());
  for (int c = 0; c < 3; ++c) {
    const T* g = grad_phi.data() + c * n;
    T* o = out.data() + c * n;
    const std::int64_t len = d[c], step = stride[c];
    for (std::size_t i = 0; i < n; ++i) {
      if ((static_cast<std::int64_t>(i) / step) % len != 0) continue;
      // Exclusive suffix sum: inc[k] feeds phi[k+1 .. len-1].
      T acc = 0;
      for (std::int64_t k = len - 1; k >= 0; --k) {
        const std::size_t j = i + static_cast<std::size_t>(k * step);
        o[j] = acc;
        acc += g[j];
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> warp_trilinear(const Tensor<T>& v, const DeformationGrid<T>& grid) {
  check_field(grid.phi.shape(), "deformation grid");
  require(v.rank() == 4, "warp input must be (C, D, H, W)");
  const Dims d = grid.dims();
  require(Dims::from_shape(v.shape(), 1) == d, "warp input and grid extents differ");
  const std::size_t n = d.count();
  const auto channels = static_cast<std::size_t>(v.dim(0));
  Tensor<T> out(v.shape());
  const T* pz = grid.phi.data();
  const T* py = pz + n;
  const T* px = py + n;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = v.data() + c * n;
    T* dst = out.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = sampling::trilinear(src, d, pz[i], py[i], px[i]);
  }
  return out;
}

template <class T>
void warp_trilinear_vjp(const Tensor<T>& v, const DeformationGrid<T>& grid,
                        const Tensor<T>& grad_out, Tensor<T>* grad_v, Tensor<T>* grad_phi) {
  const Dims d = grid.dims();
  const std::size_t n = d.count();
  const auto channels = static_cast<std::size_t>(v.dim(0));
  if (grad_v) *grad_v = Tensor<T>(v.shape());
  if (grad_phi) *grad_phi = Tensor<T>(grid.phi.shape());
  const T* pz = grid.phi.data();
  const T* py = pz + n;
  const T* px = py + n;
  for (std::size_t i = 0; i < n; ++i) {
    const auto tz = sampling::axis_tap(pz[i], d.d);
    const auto ty = sampling::axis_tap(py[i], d.h);
    const auto tx = sampling::axis_tap(px[i], d.w);
    const T wz[2] = {T(1) - tz.frac, tz.frac};
    const T wy[2] = {T(1) - ty.frac, ty.frac};
    const T wx[2] = {T(1) - tx.frac, tx.frac};
    const T sgn[2] = {T(-1), T(1)};
    std::size_t idx[2][2][2];
    const std::int64_t iz[2] = {tz.i0, tz.i1}, iy[2] = {ty.i0, ty.i1}, ix[2] = {tx.i0, tx.i1};
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int e = 0; e < 2; ++e) idx[a][b][e] = d.index(iz[a], iy[b], ix[e]);
    T dz = 0, dy = 0, dx = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      const T g = grad_out[c * n + i];
      if (g == T(0)) continue;
      const T* src = v.data() + c * n;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int e = 0; e < 2; ++e) {
            const T val = src[idx[a][b][e]];
            if (grad_v) (*grad_v)[c * n + idx[a][b][e]] += g * wz[a] * wy[b] * wx[e];
            dz += g * sgn[a] * wy[b] * wx[e] * val;
            dy += g * wz[a] * sgn[b] * wx[e] * val;
            dx += g * wz[a] * wy[b] * sgn[e] * val;
          }
    }
    if (grad_phi) {
      (*grad_phi)[i] = tz.clamped ? T(0) : dz;
      (*grad_phi)[n + i] = ty.clamped ? T(0) : dy;
      (*grad_phi)[2 * n + i] = tx.clamped ? T(0) : dx;
    }
  }
}

Volume warp_volume(const Volume& v, const DeformationGrid<float>& grid) {
  validate(v);
  const Dims d = v.dims();
  Tensor<float> out = warp_trilinear(v.voxels.reshaped({1, d.d, d.h, d.w}), grid);
  return {std::move(out).reshaped(d.shape()), v.spacing};
}

Tensor<float> warp_segmentation(const SegMap& s, const DeformationGrid<float>& grid) {
  return warp_trilinear(one_hot<float>(s), grid);
}

namespace {

// Partial derivative of channel c along `axis` at flat index i.
template <class T>
struct DiffStencil {
  std::size_t lo, hi;
  T scale;
};

template <class T>
DiffStencil<T> diff_stencil(const Dims& d, std::int64_t pos, std::int64_t len,
                            std::int64_t step, std::size_t i) {
  const auto s = static_cast<std::size_t>(step);
  if (pos == 0) return {i, i + s, T(1)};
  if (pos == len - 1) return {i - s, i, T(1)};
  (void)d;
  return {i - s, i + s, T(0.5)};
}

template <class T, class Fn>
void for_each_jacobian(const DeformationGrid<T>& grid, Fn&& fn) {
  check_field(grid.phi.shape(), "deformation grid");
  const Dims d = grid.dims();
  require(d.d >= 3 && d.h >= 3 && d.w >= 3, "jacobian needs every extent >= 3, got " + dims_str(d));
  const std::size_t n = d.count();
  const auto stride = spatial_strides(d);
  const T* phi = grid.phi.data();
  for (std::int64_t z = 0; z < d.d; ++z)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x) {
        const std::size_t i = d.index(z, y, x);
        const std::int64_t pos[3] = {z, y, x};
        std::array<DiffStencil<T>, 3> st;
        for (int a = 0; a < 3; ++a) st[a] = diff_stencil<T>(d, pos[a], d[a], stride[a], i);
        // j[c][a] = d phi_c / d axis_a
        T j[3][3];
        for (int c = 0; c < 3; ++c)
          for (int a = 0; a < 3; ++a)
            j[c][a] = st[a].scale * (phi[c * n + st[a].hi] - phi[c * n + st[a].lo]);
        fn(i, j, st, n);
      }
}

template <class T>
T det3(const T j[3][3]) {
  return j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
         j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
         j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
}

}  // namespace

template <class T>
JacobianMap<T> jacobian_determinant_map(const DeformationGrid<T>& grid) {
  JacobianMap<T> out{Tensor<T>(grid.dims().shape())};
  for_each_jacobian(grid, [&](std::size_t i, const T (&j)[3][3], const auto&, std::size_t) {
    out.det[i] = det3(j);
  });
  return out;
}

template <class T>
Tensor<T> jacobian_determinant_vjp(const DeformationGrid<T>& grid, const Tensor<T>& grad_det) {
  Tensor<T> g(grid.phi.shape());
  for_each_jacobian(grid, [&](std::size_t i, const T (&j)[3][3], const auto& st, std::size_t n) {
    const T gd = grad_det[i];
    if (gd == T(0)) return;
    // d det / d j[c][a] is the (c, a) cofactor.
    T cof[3][3];
    cof[0][0] = j[1][1] * j[2][2] - j[1][2] * j[2][1];
    cof[0][1] = j[1][2] * j[2][0] - j[1][0] * j[2][2];
    cof[0][2] = j[1][0] * j[2][1] - j[1][1] * j[2][0];
    cof[1][0] = j[0][2] * j[2][1] - j[0][1] * j[2][2];
    cof[1][1] = j[0][0] * j[2][2] - j[0][2] * j[2][0];
    cof[1][2] = j[0][1] * j[2][0] - j[0][0] * j[2][1];
    cof[2][0] = j[0][1] * j[1][2] - j[0][2] * j[1][1];
    cof[2][1] = j[0][2] * j[1][0] - j[0][0] * j[1][2];
    cof[2][2] = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    for (int c = 0; c < 3; ++c)
      for (int a = 0; a < 3; ++a) {
        const T v = gd * cof[c][a] * st[a].scale;
        g[c * n + st[a].hi] += v;
        g[c * n + st[a].lo] -= v;
      }
  });
  return g;
}

template <class T>
double folding_fraction(const JacobianMap<T>& jac) {
  const Dims d = Dims::from_shape(jac.det.shape());
  std::size_t interior = 0, folded = 0;
  for (std::int64_t z = 0; z < d.d; ++z)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x) {
        if (!is_interior(d, z, y, x)) continue;
        ++interior;
        if (jac.det[d.index(z, y, x)] <= T(0)) ++folded;
      }
  return interior ? static_cast<double>(folded) / static_cast<double>(interior) : 0.0;
}

#define REGLAT_INSTANTIATE_WARP(T)                                                             \
  template Tensor<T> increments_from_raw<T>(const Tensor<T>&);                                 \
  template Tensor<T> increments_from_raw_vjp<T>(const Tensor<T>&, const Tensor<T>&);           \
  template DeformationGrid<T> integrate_spatial_gradients<T>(const GradientField<T>&);         \
  template Tensor<T> integrate_spatial_gradients_vjp<T>(const Tensor<T>&);                     \
  template Tensor<T> warp_trilinear<T>(const Tensor<T>&, const DeformationGrid<T>&);           \
  template void warp_trilinear_vjp<T>(const Tensor<T>&, const DeformationGrid<T>&,             \
                                      const Tensor<T>&, Tensor<T>*, Tensor<T>*);               \
  template JacobianMap<T> jacobian_determinant_map<T>(const DeformationGrid<T>&);              \
  template Tensor<T> jacobian_determinant_vjp<T>(const DeformationGrid<T>&, const Tensor<T>&); \
  template double folding_fraction<T>(const JacobianMap<T>&);

REGLAT_INSTANTIATE_WARP(float)
REGLAT_INSTANTIATE_WARP(double)

}  // namespace reglat
