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

#include <cmath>

#include "../support/check.hpp"
#include "reglat/core/io.hpp"
#include "reglat/core/log.hpp"
#include "reglat/volgrid.hpp"

using namespace reglat;
using reglat::testing::TempDir;

namespace {

Volume volume_from(Dims d, std::vector<float> v) { return {Tensor<float>(d.shape(), std::move(v))}; }

Volume random_volume(Dims d, Rng& rng) {
  Volume v = Volume::zeros(d);
  for (auto& x : v.voxels.values()) x = static_cast<float>(rng.uniform());
  return v;
}

// Smooth test pattern: low-frequency sinusoids.
Volume smooth_volume(Dims d) {
  Volume v = Volume::zeros(d);
  for (std::int64_t z = 0; z < d.d; ++z)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x)
        v.at(z, y, x) = static_cast<float>(std::sin(0.06 * z) + std::cos(0.05 * y) + 0.1 * x);
  return v;
}

struct CaptureLog {
  std::vector<std::string> warnings;
  log::Sink previous;
  CaptureLog() {
    previous = log::set_sink([this](log::Level l, const std::string& m) {
      if (l == log::Level::kWarning) warnings.push_back(m);
    });
  }
  ~CaptureLog() { log::set_sink(previous); }
};

}  // namespace

TEST_CASE("normalize_volume: arithmetic oracle on [1,2,3]") {
  const Volume out = normalize_volume(volume_from({3, 1, 1}, {1, 2, 3}));
  CHECK(out.voxels[0] == 0.0f);
  CHECK(out.voxels[1] == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(out.voxels[2] == 1.0f);
}

TEST_CASE("normalize_volume: degenerate inputs give zeros with a warning") {
  CaptureLog cap;
  const Volume out = normalize_volume(volume_from({2, 2, 1}, {4, 4, 4, 4}));
  for (float v : out.voxels.values()) CHECK(v == 0.0f);
  CHECK(cap.warnings.size() == 1);
}

TEST_CASE("normalize_volume: outliers are clipped at z = 5") {
  std::vector<float> v(50, 0.0f);
  v[0] = 1.0f;
  v[1] = 0.3f;
  double mean = 0, sq = 0;
  for (float x : v) mean += x;
  mean /= 50;
  for (float x : v) sq += (x - mean) * (x - mean);
  const double sd = std::sqrt(sq / 50);
  const double z_out = (1.0 - mean) / sd, z_mid = (0.3 - mean) / sd, z_lo = -mean / sd;
  REQUIRE(z_out > 6.0);
  const Volume out = normalize_volume(volume_from({50, 1, 1}, v));
  CHECK(out.voxels[0] == 1.0f);
  CHECK(out.voxels[2] == 0.0f);
  CHECK(out.voxels[1] == doctest::Approx((z_mid - z_lo) / (5.0 - z_lo)).epsilon(1e-6));
  CHECK(out.voxels[1] != doctest::Approx((z_mid - z_lo) / (z_out - z_lo)).epsilon(1e-3));
}

TEST_CASE("normalize_volume: output in [0,1]; a second pass changes values") {
  Rng rng(3);
  Volume v = Volume::zeros({6, 5, 4});
  for (auto& x : v.voxels.values()) x = static_cast<float>(rng.normal(10, 3));
  v.voxels[7] = 1e4f;
  const Volume once = normalize_volume(v);
  for (float x : once.voxels.values()) {
    CHECK(x >= 0.0f);
    CHECK(x <= 1.0f);
  }
  const Volume twice = normalize_volume(once);
  CHECK_FALSE(twice.voxels == once.voxels);
}

TEST_CASE("make_identity_grid") {
  const auto g = make_identity_grid<float>({2, 1, 1});
  CHECK(g[0] == 0.0f);
  CHECK(g[1] == 1.0f);
  const auto one = make_identity_grid<double>({1, 1, 1});
  for (double v : one.values()) CHECK(v == 0.0);
  const Dims d{3, 3, 3};
  const auto g3 = make_identity_grid<double>(d);
  for (std::int64_t y = 0; y < 3; ++y)
    for (std::int64_t x = 0; x < 3; ++x)
      for (std::int64_t z = 0; z < 3; ++z) {
        CHECK(g3[d.index(z, y, x)] == double(z));
        CHECK(g3[d.count() + d.index(z, y, x)] == double(y));
        CHECK(g3[2 * d.count() + d.index(z, y, x)] == double(x));
      }
}

TEST_CASE("one_hot and argmax_labels invert each other") {
  Rng rng(5);
  SegMap s = SegMap::zeros({4, 3, 5}, 3);
  for (auto& l : s.labels.values()) l = static_cast<std::uint8_t>(rng.below(4));
  const auto oh = one_hot<float>(s);
  CHECK(oh.shape() == Shape{4, 4, 3, 5});
  CHECK(argmax_labels(oh).labels == s.labels);
}

TEST_CASE("apply_affine: identity is exact") {
  Rng rng(1);
  const Volume v = random_volume({5, 6, 7}, rng);
  CHECK(apply_affine(v, Affine::Identity()).voxels == v.voxels);
  SegMap s = SegMap::zeros({5, 6, 7}, 2);
  for (auto& l : s.labels.values()) l = static_cast<std::uint8_t>(rng.below(3));
  CHECK(apply_affine(s, Affine::Identity()).labels == s.labels);
}

TEST_CASE("apply_affine: +1 voxel translation along z moves an interior delta") {
  const Dims d{5, 5, 5};
  Volume v = Volume::zeros(d);
  v.at(2, 2, 2) = 1.0f;
  const Volume out = apply_affine(v, affine::translation(0, 1.0));
  for (std::size_t i = 0; i < d.count(); ++i)
    CHECK(out.voxels[i] == (i == d.index(3, 2, 2) ? 1.0f : 0.0f));
}

TEST_CASE("apply_affine: integer translation permutes interior voxels exactly") {
  Rng rng(7);
  const Dims d{8, 7, 6};
  const Volume v = random_volume(d, rng);
  const Volume out = apply_affine(v, affine::translation(1, -2.0));
  for (std::int64_t z = 0; z < d.d; ++z)
    for (std::int64_t y = 0; y + 2 < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x) CHECK(out.at(z, y, x) == v.at(z, y + 2, x));
}

TEST_CASE("apply_affine: 90 degree rotation about z swaps the in-plane axes of a bar") {
  const Dims d{5, 7, 7};
  Volume v = Volume::zeros(d);
  for (std::int64_t x = 1; x < 6; ++x) v.at(2, 3, x) = 1.0f;  // bar along x
  const Volume out = apply_affine(v, affine::rotation(0, 90.0, d));
  for (std::int64_t z = 0; z < d.d; ++z)
    for (std::int64_t y = 0; y < d.h; ++y)
      for (std::int64_t x = 0; x < d.w; ++x) {
        const float want = (z == 2 && x == 3 && y >= 1 && y <= 5) ? 1.0f : 0.0f;
        CHECK(out.at(z, y, x) == want);
      }
}

TEST_CASE("apply_affine: A then A^-1 restores smooth interiors") {
  const Dims d{16, 16, 16};
  const Volume v = smooth_volume(d);
  const Affine a = affine::rotation(0, 7.0, d) * affine::translation(2, 0.6);
  const Volume back = apply_affine(apply_affine(v, a), a.inverse());
  double worst = 0;
  for (std::int64_t z = 4; z < 12; ++z)
    for (std::int64_t y = 4; y < 12; ++y)
      for (std::int64_t x = 4; x < 12; ++x)
        worst = std::max(worst, double(std::abs(back.at(z, y, x) - v.at(z, y, x))));
  CHECK(worst < 1e-3);
}

TEST_CASE("apply_affine: singular matrices are rejected") {
  const Volume v = Volume::zeros({3, 3, 3});
  Affine a = Affine::Identity();
  a(1, 1) = 0.0;
  CHECK_THROWS_AS(apply_affine(v, a), Error);
}

TEST_CASE("affine builders") {
  const Dims d{9, 9, 9};
  const Eigen::Vector4d c(4, 4, 4, 1);
  CHECK((affine::rotation(1, 33.0, d) * c - c).norm() < 1e-12);
  CHECK((affine::scaling(1.3, d) * c - c).norm() < 1e-12);
  CHECK((affine::flip(2, d) * Eigen::Vector4d(0, 0, 0, 1) - Eigen::Vector4d(0, 0, 8, 1)).norm() <
        1e-12);
}

TEST_CASE("volume store: bit-exact round trips") {
  TempDir tmp("store");
  Rng rng(11);
  Volume v = random_volume({4, 5, 6}, rng);
  v.spacing = {1.39, 1.69, 2.0};
  v.voxels[3] = -0.0f;
  v.voxels[4] = 1e-40f;  // subnormal
  save_volume(v, tmp / "vol");
  const Volume back = load_volume(tmp / "vol");
  CHECK(back.voxels.shape() == v.voxels.shape());
  CHECK(std::memcmp(back.voxels.data(), v.voxels.data(), v.voxels.size() * 4) == 0);
  CHECK(back.spacing == v.spacing);

  SegMap s = SegMap::zeros({4, 5, 6}, 3);
  for (auto& l : s.labels.values()) l = static_cast<std::uint8_t>(rng.below(4));
  save_segmap(s, tmp / "seg");
  const SegMap sb = load_segmap(tmp / "seg");
  CHECK(sb.labels == s.labels);
  CHECK(sb.num_labels == 3);

  Tensor<float> grid = make_identity_grid<float>({3, 4, 5});
  save_array(grid, tmp / "grid");
  CHECK(load_array(tmp / "grid") == grid);
}

TEST_CASE("volume store: malformed files are rejected") {
  TempDir tmp("bad");
  save_volume(Volume::zeros({2, 2, 2}), tmp / "v");
  // 7 floats for a (2,2,2) header
  io::write_bytes(tmp / "v" / "data.raw", std::vector<std::uint8_t>(28, 0));
  CHECK_THROWS_AS(load_volume(tmp / "v"), Error);

  SegMap s = SegMap::zeros({2, 2, 2}, 2);
  save_segmap(s, tmp / "s");
  auto bytes = io::read_bytes(tmp / "s" / "data.raw");
  bytes[0] = 255;
  io::write_bytes(tmp / "s" / "data.raw", bytes);
  try {
    load_segmap(tmp / "s");
    FAIL("label 255 accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kFormat);
  }

  save_volume(Volume::zeros({2, 2, 2}), tmp / "m");
  auto meta = io::read_json(tmp / "m" / "meta.json");
  meta["byte_order"] = "big";
  io::write_json(tmp / "m" / "meta.json", meta);
  CHECK_THROWS_AS(load_volume(tmp / "m"), Error);

  io::write_text(tmp / "m" / "meta.json", "{not json");
  CHECK_THROWS_AS(load_volume(tmp / "m"), Error);

  try {
    load_volume(tmp / "missing");
    FAIL("missing store accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
}

TEST_CASE("manifest: round trip, uniqueness and existence checks") {
  TempDir tmp("man");
  DatasetManifest m;
  for (int i = 0; i < 3; ++i) {
    const std::string id = "s" + std::to_string(i);
    save_volume(Volume::zeros({2, 2, 2}), tmp / ("vol_" + id));
    save_segmap(SegMap::zeros({2, 2, 2}, 1), tmp / ("seg_" + id));
    m.subjects.push_back({id, tmp / ("vol_" + id), tmp / ("seg_" + id), i == 2 ? Split::kVal : Split::kTrain});
  }
  save_manifest(m, tmp.path());
  const DatasetManifest back = load_manifest(tmp / "manifest.json");
  REQUIRE(back.subjects.size() == 3);
  CHECK(back.in_split(Split::kTrain).size() == 2);
  CHECK(back.find("s2").split == Split::kVal);
  CHECK(back.load_subject_volume(back.find("s1")).dims() == Dims{2, 2, 2});
  CHECK(load_manifest(tmp.path()).subjects.size() == 3);

  auto j = io::read_json(tmp / "manifest.json");
  j["subjects"][1]["id"] = "s0";
  io::write_json(tmp / "manifest.json", j);
  CHECK_THROWS_AS(load_manifest(tmp.path()), Error);

  save_manifest(m, tmp.path());
  std::filesystem::remove_all(tmp / "seg_s1");
  CHECK_THROWS_AS(load_manifest(tmp.path()), Error);
}
