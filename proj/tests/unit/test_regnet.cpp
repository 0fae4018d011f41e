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
#include "../support/fixtures.hpp"
#include "reglat/core/io.hpp"
#include "reglat/ops.hpp"
#include "reglat/regnet.hpp"

using namespace reglat;
using namespace reglat::testing;

TEST_CASE("arch: bottleneck shapes") {
  ArchConfig hippo;
  hippo.in_shape = {64, 64, 64};
  hippo.n_downsamplings = 4;
  hippo.base_channels = 4;
  CHECK(hippo.latent_channels() == 64);
  CHECK(hippo.latent_dims() == Dims{4, 4, 4});

  ArchConfig lung;
  lung.in_shape = {128, 64, 128};
  lung.n_downsamplings = 3;
  CHECK(lung.latent_dims() == Dims{16, 8, 16});

  ArchConfig bad;
  bad.in_shape = {30, 32, 32};
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(ArchConfig::from_json(hippo.to_json()) == hippo);
}

TEST_CASE("encode: 64^3 input with four downsamplings gives a (64,4,4,4) code") {
  ArchConfig a;
  a.in_shape = {64, 64, 64};
  a.n_downsamplings = 4;
  a.base_channels = 4;
  RegNet<float> net(a, 1);
  Rng rng(2);
  const Volume v = random_volume(a.in_shape, rng);
  const auto z = net.encode(v);
  CHECK(z.act.shape() == Shape{64, 4, 4, 4});
  CHECK(net.encode(v).act == z.act);
  CHECK(z.act.all_finite());
}

TEST_CASE("latent flatten / unflatten is a channel-major bijection") {
  const ArchConfig a = mini_arch();
  RegNet<double> net(a, 3);
  Rng rng(4);
  const auto z = net.encode(random_volume(a.in_shape, rng));
  const auto flat = z.flat();
  CHECK(flat.size() == a.latent_size());
  const Dims ld = a.latent_dims();
  CHECK(flat[ld.count() + 1] == z.act[ld.count() + 1]);  // channel 1, voxel 1
  CHECK(LatentCode<double>::unflatten(flat, a).act == z.act);
  std::vector<double> short_vec(flat.size() - 1);
  CHECK_THROWS_AS(LatentCode<double>::unflatten(short_vec, a), Error);
}

TEST_CASE("decode: zero latent with the zero-initialized head is the identity") {
  const ArchConfig a = mini_arch();
  RegNet<float> net(a, 5);
  const Dims ld = a.latent_dims();
  const LatentCode<float> zero{Tensor<float>({a.latent_channels(), ld.d, ld.h, ld.w})};
  const auto inc = net.decode(zero);
  CHECK(inc.inc.shape() == Shape{3, a.in_shape.d, a.in_shape.h, a.in_shape.w});
  for (float v : inc.inc.values()) CHECK(v == 1.0f);
  CHECK(integrate_spatial_gradients(inc).phi == make_identity_grid<float>(a.in_shape));
  Rng rng(6);
  LatentCode<float> z{zero.act};
  for (auto& v : z.act.values()) v = static_cast<float>(rng.normal());
  CHECK(net.decode(z).inc == net.decode(z).inc);
  const LatentCode<float> wrong{Tensor<float>({1, 1, 1, 1})};
  CHECK_THROWS_AS(net.decode(wrong), Error);
}

TEST_CASE("encode rejects mismatched shapes") {
  RegNet<float> net(mini_arch(), 1);
  CHECK_THROWS_AS(net.encode(Volume::zeros({8, 8, 4})), Error);
}

TEST_CASE("decode(lambda u) has a directional derivative matching finite differences") {
  const ArchConfig a = mini_arch();
  RegNet<double> net = randomize_head(RegNet<double>(a, 7), 8);
  Rng rng(9);
  const Dims ld = a.latent_dims();
  const auto u = random_tensor({a.latent_channels(), ld.d, ld.h, ld.w}, rng);
  const auto w = random_tensor({3, a.in_shape.d, a.in_shape.h, a.in_shape.w}, rng);
  // f(lambda) = <w, inc(decode(lambda u))>; gradcheck over the scalar lambda.
  auto r = gradcheck({Tensor<double>({1}, {0.7})}, [&](ad::Tape<double>& t, const std::vector<ad::Var>& x) {
    const auto params = net.bind(t, false);
    const double lam = t.value(x[0])[0];
    Tensor<double> z(u.shape());
    for (std::size_t i = 0; i < u.size(); ++i) z[i] = lam * u[i];
    auto zv = t.record(std::move(z), {x[0]}, [x, u](ad::Tape<double>& tp, const Tensor<double>& g) {
      double s = 0;
      for (std::size_t i = 0; i < u.size(); ++i) s += g[i] * u[i];
      tp.accumulate(x[0], Tensor<double>({1}, {s}));
    });
    return dot(t, ad::increments(t, net.decode_raw(t, params, zv, {})), w);
  });
  CHECK(r.rel_error <= 1e-4);
  CHECK(r.analytic_norm > 0);
}

TEST_CASE("register_pair: antisymmetry, swap and the zero-epoch identity") {
  const ArchConfig a = mini_arch();
  RegNet<float> net(a, 11);
  Rng rng(12);
  const auto [m, ms] = random_subject(a.in_shape, 2, rng);
  const auto [f, fs] = random_subject(a.in_shape, 2, rng);

  const auto out = register_pair(net, m, f, ms, fs);
  // zero-initialized head: identity grids and an exact copy of M
  CHECK(out.fwd_grid.phi == make_identity_grid<float>(a.in_shape));
  CHECK(out.bwd_grid.phi == make_identity_grid<float>(a.in_shape));
  CHECK(out.warped_moving.voxels == m.voxels);
  CHECK(argmax_labels(out.warped_moving_seg).labels == ms.labels);

  const auto swapped = register_pair(net, f, m, fs, ms);
  for (std::size_t i = 0; i < out.latent_diff.size(); ++i) CHECK(swapped.latent_diff[i] == -out.latent_diff[i]);

  const auto self = register_pair(net, m, m, ms, ms);
  for (float v : self.latent_diff.values()) CHECK(v == 0.0f);
}

TEST_CASE("register_pair: trained-looking nets swap fwd and bwd exactly") {
  const ArchConfig a = mini_arch();
  RegNet<float> net = randomize_head(RegNet<float>(a, 13), 14);
  Rng rng(15);
  const auto [m, ms] = random_subject(a.in_shape, 2, rng);
  const auto [f, fs] = random_subject(a.in_shape, 2, rng);
  const LossWeights w;
  const auto o1 = register_pair(net, m, f, ms, fs, w);
  const auto o2 = register_pair(net, f, m, fs, ms, w);
  CHECK(o1.fwd_grad.inc == o2.bwd_grad.inc);
  CHECK(o1.bwd_grid.phi == o2.fwd_grid.phi);
  CHECK(o1.loss_terms.total == o2.loss_terms.total);
  CHECK(o1.loss_terms.fwd.sim == o2.loss_terms.bwd.sim);
  CHECK(o1.loss_terms.fwd.jac == o2.loss_terms.bwd.jac);

  const auto self = register_pair(net, m, m, ms, ms, w);
  CHECK(self.fwd_grid.phi == self.bwd_grid.phi);
}

TEST_CASE("total_loss: agrees with the graph terms and is linear in the weights") {
  const ArchConfig a = mini_arch();
  RegNet<double> net = randomize_head(RegNet<double>(a, 16), 17);
  Rng rng(18);
  const auto [m, ms] = random_subject(a.in_shape, 2, rng);
  const auto [f, fs] = random_subject(a.in_shape, 2, rng);
  LossWeights w{0.1, 1.0, 0};
  const auto out = register_pair(net, m, f, ms, fs, w);
  const LossTerms t = total_loss(out, m, f, ms, fs, w);
  CHECK(t.total == doctest::Approx(out.loss_terms.total).epsilon(1e-12));
  CHECK(t.fwd.smooth == doctest::Approx(out.loss_terms.fwd.smooth).epsilon(1e-12));
  CHECK(t.bwd.seg == doctest::Approx(out.loss_terms.bwd.seg).epsilon(1e-12));

  LossWeights w2 = w;
  w2.alpha = 0.2;
  const LossTerms t2 = total_loss(out, m, f, ms, fs, w2);
  CHECK(t2.total - t.total == doctest::Approx(0.1 * (t.fwd.smooth + t.bwd.smooth)).epsilon(1e-9));

  LossWeights no_jac = w;
  no_jac.beta = 0.0;
  const auto o3 = register_pair(net, m, f, ms, fs, no_jac);
  CHECK(o3.loss_terms.fwd.jac == 0.0);
  CHECK(o3.loss_terms.total ==
        doctest::Approx(o3.loss_terms.fwd.weighted(no_jac) + o3.loss_terms.bwd.weighted(no_jac)).epsilon(1e-12));

  // alpha = beta = 0, M = F, identity fields
  RegNet<double> ident(a, 19);
  const LossWeights zero{0.0, 0.0, 0};
  CHECK(register_pair(ident, m, m, ms, ms, zero).loss_terms.total == doctest::Approx(0.0).scale(1).epsilon(1e-6));
}

TEST_CASE("network gradcheck on a 2-channel 8^3 mini config") {
  ArchConfig a = mini_arch();
  RegNet<double> net = randomize_head(RegNet<double>(a, 21), 22);
  Rng rng(23);
  const auto [m, ms] = random_subject(a.in_shape, 2, rng);
  const auto [f, fs] = random_subject(a.in_shape, 2, rng);
  std::vector<Tensor<double>> params;
  for (const auto& p : net.parameters()) params.push_back(p.value);
  const LossWeights w{0.1, 1.0, 0};
  auto r = gradcheck(params, [&](ad::Tape<double>& t, const std::vector<ad::Var>& vars) {
    return build_pair_graph(t, net, vars, m, f, ms, fs, w).total;
  });
  MESSAGE("network gradcheck rel error " << r.rel_error << " over " << r.checked << " parameters");
  CHECK(r.rel_error <= 1e-4);
  CHECK(r.analytic_norm > 0);
}

TEST_CASE("checkpoint: round trip, arch mismatch and corruption") {
  TempDir tmp("ckpt");
  const ArchConfig a = mini_arch();
  RegNet<float> net = randomize_head(RegNet<float>(a, 31), 32);
  Checkpoint c{a, net.parameters(), 7, Rng(5).state()};
  save_checkpoint(c, tmp / "c.bin");
  const Checkpoint back = load_checkpoint(tmp / "c.bin", &a);
  CHECK(back.epoch == 7);
  CHECK(back.rng_state == c.rng_state);
  CHECK(back.fingerprint() == c.fingerprint());
  Rng rng(33);
  const Volume v = random_volume(a.in_shape, rng);
  CHECK(back.network().encode(v).act == net.encode(v).act);

  ArchConfig other = a;
  other.n_downsamplings = 2;
  CHECK_THROWS_AS(load_checkpoint(tmp / "c.bin", &other), Error);

  auto bytes = io::read_bytes(tmp / "c.bin");
  io::write_bytes(tmp / "trunc.bin", std::span(bytes.data(), bytes.size() - 5));
  CHECK_THROWS_AS(load_checkpoint(tmp / "trunc.bin"), Error);
  bytes[bytes.size() - 3] ^= 0x40;
  io::write_bytes(tmp / "flip.bin", bytes);
  CHECK_THROWS_AS(load_checkpoint(tmp / "flip.bin"), Error);
  bytes[0] = 'X';
  io::write_bytes(tmp / "magic.bin", bytes);
  CHECK_THROWS_AS(load_checkpoint(tmp / "magic.bin"), Error);
  CHECK_THROWS_AS(load_checkpoint(tmp / "missing.bin"), Error);

  // fingerprints react to any parameter change
  auto params = net.parameters();
  params[0].value[0] += 1e-3f;
  CHECK(model_fingerprint(a, params) != net.fingerprint());
}
