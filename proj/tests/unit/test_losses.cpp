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

#include <doctest.h>

#include "../support/check.hpp"
#include "../support/oracles.hpp"
#include "reglat/losses.hpp"
#include "reglat/ops.hpp"

using namespace reglat;
using reglat::testing::gradcheck;
using reglat::testing::random_tensor;

namespace {

// Brute-force local NCC: explicit window loops, no box filters.
double local_ncc_oracle(const Tensor<double>& a, const Tensor<double>& b, Dims d, int w) {
  const int r = w / 2;
  double acc = 0;
  for (std::int64_t z = 0; z < d.d; ++z)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x) {
        double sa = 0, sb = 0, n = 0;
        std::vector<std::pair<double, double>> pts;
        for (std::int64_t dz = -r; dz <= r; ++dz)
          for (std::int64_t dy = -r; dy <= r; ++dy)
            for (std::int64_t dx = -r; dx <= r; ++dx) {
              const auto zz = z + dz, yy = y + dy, xx = x + dx;
              if (zz < 0 || yy < 0 || xx < 0 || zz >= d.d || yy >= d.h || xx >= d.w) continue;
              const auto i = d.index(zz, yy, xx);
              pts.push_back({a[i], b[i]});
              sa += a[i];
              sb += b[i];
              n += 1;
            }
        const double ma = sa / n, mb = sb / n;
        double cab = 0, caa = 0, cbb = 0;
        for (auto [u, v] : pts) {
          cab += (u - ma) * (v - mb);
          caa += (u - ma) * (u - ma);
          cbb += (v - mb) * (v - mb);
        }
        acc += cab / std::sqrt(caa * cbb + kNccEpsilon);
      }
  return 1.0 - acc / double(d.count());
}

}  // namespace

TEST_CASE("ncc: self, anti-correlated and constant inputs") {
  Rng rng(1);
  const auto x = random_tensor({1, 5, 6, 4}, rng);
  Tensor<double> anti(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) anti[i] = -x[i] + 3.0;
  const Tensor<double> c(x.shape(), 0.25);
  for (int w : {0, 3}) {
    CHECK(ncc_loss(x, x, w) == doctest::Approx(0.0).epsilon(1e-6).scale(1));
    CHECK(ncc_loss(x, anti, w) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(ncc_loss(c, x, w) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ncc_loss(x, c, w) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("ncc: global mode is invariant to affine intensity rescaling") {
  Rng rng(2);
  const auto a = random_tensor({4, 5, 6}, rng), b = random_tensor({4, 5, 6}, rng);
  Tensor<double> b2(b.shape());
  for (std::size_t i = 0; i < b.size(); ++i) b2[i] = 3.5 * b[i] - 2.0;
  // The epsilon guard breaks exact invariance only at the 1e-5 / (saa*sbb) level.
  CHECK(ncc_loss(a, b2, 0) == doctest::Approx(ncc_loss(a, b, 0)).epsilon(1e-6));
  const double v = ncc_loss(a, b, 0);
  CHECK(v >= 0.0);
  CHECK(v <= 2.0);
}

TEST_CASE("ncc: local windows match a brute-force window oracle") {
  Rng rng(3);
  const Dims d{5, 4, 6};
  const auto a = random_tensor({5, 4, 6}, rng), b = random_tensor({5, 4, 6}, rng);
  for (int w : {1, 3, 5}) CHECK(ncc_loss(a, b, w) == doctest::Approx(local_ncc_oracle(a, b, d, w)).epsilon(1e-10));
}

TEST_CASE("ncc: shape mismatch is an error") {
  CHECK_THROWS_AS(ncc_loss(Tensor<double>({2, 2, 2}), Tensor<double>({2, 2, 3}), 0), Error);
}

TEST_CASE("dice: identical, disjoint and half-confidence oracles") {
  Tensor<double> t({3, 2, 2, 2});
  t[8 + 0] = t[8 + 1] = 1;     // label 1
  t[16 + 5] = t[16 + 6] = 1;   // label 2
  for (int i = 0; i < 8; ++i) t[i] = 1 - t[8 + i] - t[16 + i];
  CHECK(dice_loss(t, t) == doctest::Approx(0.0).epsilon(1e-5).scale(1));
  Tensor<double> disjoint({3, 2, 2, 2});
  disjoint[8 + 3] = 1;
  disjoint[16 + 4] = 1;
  CHECK(dice_loss(disjoint, t) == 1.0);
  Tensor<double> half(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) half[i] = 0.5 * t[i];
  // per label: 2 * (0.5 * 2) / (0.5 * 2 + 2) = 2/3, so the loss is 1/3
  CHECK(dice_loss(half, t) == doctest::Approx(1.0 / 3.0).epsilon(1e-5));
}

TEST_CASE("hard Dice metrics") {
  SegMap a = SegMap::zeros({2, 2, 2}, 2), b = SegMap::zeros({2, 2, 2}, 2);
  a.labels[0] = a.labels[1] = 1;
  b.labels[1] = b.labels[2] = 1;
  const auto per = dice_per_label(a, b);
  REQUIRE(per.size() == 2);
  CHECK(per[0] == doctest::Approx(0.5));
  CHECK(per[1] == 1.0);  // label 2 absent from both
  CHECK(mean_dice(a, a) == 1.0);
}

TEST_CASE("jacobian loss: identity, monotone grids and the folded oracle") {
  CHECK(jacobian_loss(DeformationGrid<double>::identity({4, 5, 6})) == 0.0);
  Rng rng(5);
  const auto raw = random_tensor({3, 6, 6, 6}, rng, -0.3, 0.3);
  const auto phi = integrate_spatial_gradients(GradientField<double>{increments_from_raw(raw)});
  CHECK(jacobian_loss(phi) == 0.0);

  const auto folded = testing::folded_field_5();
  double acc = 0;
  for (std::int64_t z = 1; z < 4; ++z)
    for (std::int64_t y = 1; y < 4; ++y)
      for (std::int64_t x = 1; x < 4; ++x) acc += std::max(0.0, -testing::central_difference_det(folded, z, y, x));
  CHECK(acc > 0);
  CHECK(jacobian_loss(folded) == doctest::Approx(acc / 27.0).epsilon(1e-12));
}

TEST_CASE("smoothness: constant fields, a unit step and quadratic homogeneity") {
  const Dims d{4, 3, 5};
  CHECK(smoothness_loss(GradientField<double>{Tensor<double>({3, 4, 3, 5}, 1.0)}) == 0.0);

  // A unit step in channel 0 along x on one line: positions x >= 2 of the
  // line (z=1, y=1) hold 2 instead of 1.
  Tensor<double> inc({3, 4, 3, 5}, 1.0);
  for (std::int64_t x = 2; x < 5; ++x) inc[d.index(1, 1, x)] = 2.0;
  // brute-force oracle: every forward difference of every channel
  double sum = 0, count = 0;
  for (int c = 0; c < 3; ++c)
    for (int axis = 0; axis < 3; ++axis)
      for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
          for (std::int64_t x = 0; x < d.w; ++x) {
            std::int64_t p[3] = {z, y, x};
            if (++p[axis] >= d[axis]) continue;
            const auto base = std::size_t(c) * d.count();
            const double diff = inc[base + d.index(p[0], p[1], p[2])] - inc[base + d.index(z, y, x)];
            sum += diff * diff;
            count += 1;
          }
  // one unit difference along x, six each along z and y
  CHECK(sum == 13.0);
  const double s = smoothness_loss(GradientField<double>{inc});
  CHECK(s == doctest::Approx(sum / count).epsilon(1e-14));

  Rng rng(6);
  const auto g = random_tensor({3, 4, 3, 5}, rng);
  Tensor<double> g3(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g3[i] = -3.0 * g[i];
  CHECK(smoothness_loss(GradientField<double>{g3}) ==
        doctest::Approx(9.0 * smoothness_loss(GradientField<double>{g})).epsilon(1e-12));
}

TEST_CASE("loss weights validation") {
  CHECK_NOTHROW(LossWeights{}.validate());
  CHECK_THROWS_AS((LossWeights{-0.1, 1.0, 0}.validate()), Error);
  CHECK_THROWS_AS((LossWeights{0.1, 1.0, 4}.validate()), Error);
}

// --- differentiation contract ---------------------------------------------------

TEST_CASE("gradcheck: ncc global and local") {
  Rng rng(7);
  const auto a = random_tensor({1, 5, 5, 5}, rng), b = random_tensor({1, 5, 5, 5}, rng);
  for (int w : {0, 3}) {
    auto r = gradcheck({a, b}, [w](ad::Tape<double>& t, const std::vector<ad::Var>& x) {
      return ad::ncc_loss(t, x[0], x[1], w);
    });
    CHECK(r.rel_error <= 1e-4);
    CHECK(r.analytic_norm > 0);
  }
}

TEST_CASE("gradcheck: dice") {
  Rng rng(8);
  const auto pred = random_tensor({3, 5, 5, 5}, rng, 0.0, 1.0);
  const auto target = random_tensor({3, 5, 5, 5}, rng, 0.0, 1.0);
  auto r = gradcheck({pred}, [&](ad::Tape<double>& t, const std::vector<ad::Var>& x) {
    return ad::dice_loss(t, x[0], t.constant(target));
  });
  CHECK(r.rel_error <= 1e-4);
}

TEST_CASE("gradcheck: smoothness") {
  Rng rng(9);
  const auto inc = random_tensor({3, 5, 5, 5}, rng);
  auto r = gradcheck({inc}, [](ad::Tape<double>& t, const std::vector<ad::Var>& x) {
    return ad::smoothness_loss(t, x[0]);
  });
  CHECK(r.rel_error <= 1e-4);
}
