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

#include "reglat/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <Eigen/Dense>

namespace reglat::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Lowers a (C, D, H, W) block into a (C*k^3, P) column matrix, P being the
// number of output positions of the convolution with geometry g.
template <class T>
void im2col(const T* x, std::int64_t channels, const Dims& in, ConvGeometry g, const Dims& out,
            T* cols) {
  const int k = g.kernel, s = g.stride, p = g.pad;
  const auto positions = static_cast<std::int64_t>(out.count());
  const auto in_count = static_cast<std::int64_t>(in.count());
  for (std::int64_t c = 0; c < channels; ++c)
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const std::int64_t row = ((c * k + kz) * k + ky) * k + kx;
          T* dst = cols + row * positions;
          const T* src_c = x + c * in_count;
          for (std::int64_t oz = 0; oz < out.d; ++oz) {
            const std::int64_t iz = oz * s - p + kz;
            for (std::int64_t oy = 0; oy < out.h; ++oy) {
              const std::int64_t iy = oy * s - p + ky;
              T* line = dst + (oz * out.h + oy) * out.w;
              if (iz < 0 || iz >= in.d || iy < 0 || iy >= in.h) {
                std::fill(line, line + out.w, T(0));
                continue;
              }
              const T* src = src_c + (iz * in.h + iy) * in.w;
              if (s == 1) {
                // valid ox satisfy 0 <= ox - p + kx < in.w
                const std::int64_t lo = std::clamp<std::int64_t>(p - kx, 0, out.w);
                const std::int64_t hi = std::clamp<std::int64_t>(in.w + p - kx, lo, out.w);
                std::fill(line, line + lo, T(0));
                std::copy(src + lo - p + kx, src + hi - p + kx, line + lo);
                std::fill(line + hi, line + out.w, T(0));
                continue;
              }
              for (std::int64_t ox = 0; ox < out.w; ++ox) {
                const std::int64_t ix = ox * s - p + kx;
                line[ox] = (ix >= 0 && ix < in.w) ? src[ix] : T(0);
              }
            }
          }
        }
}

// Adjoint of im2col: scatters-adds columns back into a (C, D, H, W) block.
template <class T>
void col2im(const T* cols, std::int64_t channels, const Dims& in, ConvGeometry g, const Dims& out,
            T* x) {
  const int k = g.kernel, s = g.stride, p = g.pad;
  const auto positions = static_cast<std::int64_t>(out.count());
  const auto in_count = static_cast<std::int64_t>(in.count());
  for (std::int64_t c = 0; c < channels; ++c)
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const std::int64_t row = ((c * k + kz) * k + ky) * k + kx;
          const T* src = cols + row * positions;
          T* dst_c = x + c * in_count;
          for (std::int64_t oz = 0; oz < out.d; ++oz) {
            const std::int64_t iz = oz * s - p + kz;
            if (iz < 0 || iz >= in.d) continue;
            for (std::int64_t oy = 0; oy < out.h; ++oy) {
              const std::int64_t iy = oy * s - p + ky;
              if (iy < 0 || iy >= in.h) continue;
              const T* line = src + (oz * out.h + oy) * out.w;
              T* dst = dst_c + (iz * in.h + iy) * in.w;
              if (s == 1) {
                const std::int64_t lo = std::clamp<std::int64_t>(p - kx, 0, out.w);
                const std::int64_t hi = std::clamp<std::int64_t>(in.w + p - kx, lo, out.w);
                for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox - p + kx] += line[ox];
                continue;
              }
              for (std::int64_t ox = 0; ox < out.w; ++ox) {
                const std::int64_t ix = ox * s - p + kx;
                if (ix >= 0 && ix < in.w) dst[ix] += line[ox];
              }
            }
          }
        }
}

// Uninitialized buffer; every consumer overwrites it fully.
struct AlignedDelete {
  void operator()(void* p) const noexcept { ::operator delete(p, std::align_val_t{kTensorAlign}); }
};

template <class T>
std::unique_ptr<T[], AlignedDelete> scratch(std::size_t n) {
  return std::unique_ptr<T[], AlignedDelete>(
      static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kTensorAlign})));
}

void check_geometry(ConvGeometry g) {
  require(g.kernel >= 1 && g.stride >= 1 && g.pad >= 0, "invalid convolution geometry");
}

}  // namespace

template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvGeometry g) {
  check_geometry(g);
  require(x.rank() == 4, "conv3d input must be (C, D, H, W), got " + shape_str(x.shape()));
  require(weight.rank() == 5 && weight.dim(1) == x.dim(0) && weight.dim(2) == g.kernel,
          "conv3d weight " + shape_str(weight.shape()) + " does not fit input " +
              shape_str(x.shape()));
  const std::int64_t cin = x.dim(0), cout = weight.dim(0);
  require(bias.size() == static_cast<std::size_t>(cout), "conv3d bias length mismatch");
  const Dims in = Dims::from_shape(x.shape(), 1);
  const Dims out = g.out_dims(in);
  require(out.valid(), "conv3d output would be empty");
  const auto positions = static_cast<Eigen::Index>(out.count());
  const Eigen::Index rows = cin * g.kernel * g.kernel * g.kernel;

  Tensor<T> y({cout, out.d, out.h, out.w});
  auto cols = scratch<T>(static_cast<std::size_t>(rows * positions));
  im2col(x.data(), cin, in, g, out, cols.get());
  MatMap<T> ym(y.data(), cout, positions);
  ym.noalias() = ConstMatMap<T>(weight.data(), cout, rows) * ConstMatMap<T>(cols.get(), rows, positions);
  for (Eigen::Index c = 0; c < cout; ++c) ym.row(c).array() += bias[static_cast<std::size_t>(c)];
  return y;
}

template <class T>
void conv3d_vjp(const Tensor<T>& x, const Tensor<T>& weight, ConvGeometry g,
                const Tensor<T>& grad_out, Tensor<T>* grad_x, Tensor<T>* grad_w,
                Tensor<T>* grad_b) {
  const std::int64_t cin = x.dim(0), cout = weight.dim(0);
  const Dims in = Dims::from_shape(x.shape(), 1);
  const Dims out = g.out_dims(in);
  const auto positions = static_cast<Eigen::Index>(out.count());
  const Eigen::Index rows = cin * g.kernel * g.kernel * g.kernel;
  ConstMatMap<T> gy(grad_out.data(), cout, positions);

  if (grad_b) {
    *grad_b = Tensor<T>({cout});
    for (Eigen::Index c = 0; c < cout; ++c) (*grad_b)[static_cast<std::size_t>(c)] = gy.row(c).sum();
  }
  auto cols = scratch<T>(static_cast<std::size_t>(rows * positions));
  if (grad_w) {
    im2col(x.data(), cin, in, g, out, cols.get());
    *grad_w = Tensor<T>(weight.shape());
    MatMap<T>(grad_w->data(), cout, rows).noalias() =
        gy * ConstMatMap<T>(cols.get(), rows, positions).transpose();
  }
  if (grad_x) {
    MatMap<T>(cols.get(), rows, positions).noalias() =
        ConstMatMap<T>(weight.data(), cout, rows).transpose() * gy;
    *grad_x = Tensor<T>(x.shape());
    col2im(cols.get(), cin, in, g, out, grad_x->data());
  }
}

template <class T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvGeometry g) {
  check_geometry(g);
  require(x.rank() == 4, "conv_transpose3d input must be (C, D, H, W)");
  require(weight.rank() == 5 && weight.dim(0) == x.dim(0) && weight.dim(2) == g.kernel,
          "conv_transpose3d weight " + shape_str(weight.shape()) + " does not fit input " +
              shape_str(x.shape()));
  const std::int64_t cin = x.dim(0), cout = weight.dim(1);
  require(bias.size() == static_cast<std::size_t>(cout), "conv_transpose3d bias length mismatch");
  const Dims in = Dims::from_shape(x.shape(), 1);
  const Dims out = g.transposed_dims(in);
  require(out.valid() && g.out_dims(out) == in, "conv_transpose3d geometry is not invertible");
  const auto positions = static_cast<Eigen::Index>(in.count());
  const Eigen::Index rows = cout * g.kernel * g.kernel * g.kernel;

  auto cols = scratch<T>(static_cast<std::size_t>(rows * positions));
  MatMap<T>(cols.get(), rows, positions).noalias() =
      ConstMatMap<T>(weight.data(), cin, rows).transpose() *
      ConstMatMap<T>(x.data(), cin, positions);
  Tensor<T> y({cout, out.d, out.h, out.w});
  col2im(cols.get(), cout, out, g, in, y.data());
  const std::size_t n = out.count();
  for (std::int64_t c = 0; c < cout; ++c) {
    const T b = bias[static_cast<std::size_t>(c)];
    T* yc = y.data() + static_cast<std::size_t>(c) * n;
    for (std::size_t i = 0; i < n; ++i) yc[i] += b;
  }
  return y;
}

template <class T>
void conv_transpose3d_vjp(const Tensor<T>& x, const Tensor<T>& weight, ConvGeometry g,
                          const Tensor<T>& grad_out, Tensor<T>* grad_x, Tensor<T>* grad_w,
                          Tensor<T>* grad_b) {
  const std::int64_t cin = x.dim(0), cout = weight.dim(1);
  const Dims in = Dims::from_shape(x.shape(), 1);
  const Dims out = g.transposed_dims(in);
  const auto positions = static_cast<Eigen::Index>(in.count());
  const Eigen::Index rows = cout * g.kernel * g.kernel * g.kernel;

  if (grad_b) {
    *grad_b = Tensor<T>({cout});
    const std::size_t n = out.count();
    for (std::int64_t c = 0; c < cout; ++c) {
      T acc = 0;
      const T* gc = grad_out.data() + static_cast<std::size_t>(c) * n;
      for (std::size_t i = 0; i < n; ++i) acc += gc[i];
      (*grad_b)[static_cast<std::size_t>(c)] = acc;
    }
  }
  if (!grad_x && !grad_w) return;
  auto cols = scratch<T>(static_cast<std::size_t>(rows * positions));
  im2col(grad_out.data(), cout, out, g, in, cols.get());
  ConstMatMap<T> gcols(cols.get(), rows, positions);
  if (grad_x) {
    *grad_x = Tensor<T>(x.shape());
    MatMap<T>(grad_x->data(), cin, positions).noalias() =
        ConstMatMap<T>(weight.data(), cin, rows) * gcols;
  }
  if (grad_w) {
    *grad_w = Tensor<T>(weight.shape());
    MatMap<T>(grad_w->data(), cin, rows).noalias() =
        ConstMatMap<T>(x.data(), cin, positions) * gcols.transpose();
  }
}

template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, std::vector<T>* inv_std) {
  require(x.rank() == 4, "instance_norm input must be (C, D, H, W)");
  const auto channels = static_cast<std::size_t>(x.dim(0));
  const std::size_t n = x.size() / channels;
  Tensor<T> y(x.shape());
  if (inv_std) inv_std->assign(channels, T(0));
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x.data() + c * n;
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += xc[i];
    mean /= double(n);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (xc[i] - mean) * (xc[i] - mean);
    var /= double(n);
    const double is = 1.0 / std::sqrt(var + kInstanceNormEpsilon);
    T* yc = y.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) yc[i] = static_cast<T>((xc[i] - mean) * is);
    if (inv_std) (*inv_std)[c] = static_cast<T>(is);
  }
  return y;
}

template <class T>
Tensor<T> instance_norm_vjp(const Tensor<T>& y, const std::vector<T>& inv_std,
                            const Tensor<T>& grad_out) {
  const auto channels = static_cast<std::size_t>(y.dim(0));
  const std::size_t n = y.size() / channels;
  Tensor<T> gx(y.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const T* yc = y.data() + c * n;
    const T* gc = grad_out.data() + c * n;
    double mg = 0, mgy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mg += gc[i];
      mgy += double(gc[i]) * yc[i];
    }
    mg /= double(n);
    mgy /= double(n);
    T* out = gx.data() + c * n;
    const double is = inv_std[c];
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(is * (gc[i] - mg - yc[i] * mgy));
  }
  return gx;
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
  return y;
}

template <class T>
Tensor<T> leaky_relu_vjp(const Tensor<T>& x, T slope, const Tensor<T>& grad_out) {
  Tensor<T> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > T(0) ? grad_out[i] : slope * grad_out[i];
  return g;
}

#define REGLAT_INSTANTIATE_NN(T)                                                                \
  template Tensor<T> conv3d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                               ConvGeometry);                                                   \
  template void conv3d_vjp<T>(const Tensor<T>&, const Tensor<T>&, ConvGeometry,                 \
                              const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);            \
  template Tensor<T> conv_transpose3d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                         ConvGeometry);                                         \
  template void conv_transpose3d_vjp<T>(const Tensor<T>&, const Tensor<T>&, ConvGeometry,       \
                                        const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);  \
  template Tensor<T> instance_norm<T>(const Tensor<T>&, std::vector<T>*);                       \
  template Tensor<T> instance_norm_vjp<T>(const Tensor<T>&, const std::vector<T>&,              \
                                          const Tensor<T>&);                                    \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                        \
  template Tensor<T> leaky_relu_vjp<T>(const Tensor<T>&, T, const Tensor<T>&);

REGLAT_INSTANTIATE_NN(float)
REGLAT_INSTANTIATE_NN(double)

}  // namespace reglat::nn
